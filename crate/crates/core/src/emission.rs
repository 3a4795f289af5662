//! Per-frame log-probability matrices produced by an acoustic model.
//!
//! Row `t` holds natural-log probabilities over the output vocabulary at
//! frame `t`; column 0 is the CTC blank. Two file encodings exist:
//!
//! * binary (`.ems`): the 8 bytes `MIENEMS1`, then `T` and `V` as
//!   little-endian `u32`, then `T * V` little-endian `f32` values, row-major;
//! * text (`.ems.txt`): a first line `T V`, then `T` lines of `V`
//!   whitespace-separated numbers.
//!
//! Readers accept either encoding regardless of the file name.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MIENEMS1";
pub const BINARY_EXT: &str = "ems";
pub const TEXT_EXT: &str = "ems.txt";

/// Rows must log-sum-exp to zero within this tolerance.
pub const ROW_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct EmissionMatrix {
    frames: usize,
    vocab: usize,
    data: Vec<f64>,
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl EmissionMatrix {
    /// Wrap row-major log-probabilities, checking shape and normalization.
    pub fn new(frames: usize, vocab: usize, data: Vec<f64>) -> Result<Self> {
        Self::check_shape(frames, vocab, data.len())?;
        for t in 0..frames {
            let row = &data[t * vocab..(t + 1) * vocab];
            if row.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
                return Err(Error::Emission(format!("frame {t} contains NaN or +inf")));
            }
            let z = log_sum_exp(row);
            if !(z.abs() <= ROW_TOLERANCE) {
                return Err(Error::Emission(format!("frame {t} log-sums to {z}, not 0")));
            }
        }
        Ok(EmissionMatrix { frames, vocab, data })
    }

    /// Log-softmax each row of unnormalized scores.
    pub fn from_logits(frames: usize, vocab: usize, mut logits: Vec<f64>) -> Result<Self> {
        Self::check_shape(frames, vocab, logits.len())?;
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::Emission("logits must be finite".into()));
        }
        for row in logits.chunks_mut(vocab) {
            let z = log_sum_exp(row);
            row.iter_mut().for_each(|x| *x -= z);
        }
        Ok(EmissionMatrix { frames, vocab, data: logits })
    }

    /// Take the log of each row of probabilities.
    pub fn from_probs(frames: usize, vocab: usize, probs: &[f64]) -> Result<Self> {
        Self::new(frames, vocab, probs.iter().map(|p| p.ln()).collect())
    }

    fn check_shape(frames: usize, vocab: usize, len: usize) -> Result<()> {
        if frames == 0 {
            return Err(Error::Emission("emission matrix needs at least one frame".into()));
        }
        if vocab < 2 {
            return Err(Error::Emission("emission vocabulary needs a blank and one token".into()));
        }
        if frames.checked_mul(vocab) != Some(len) {
            return Err(Error::Emission(format!("expected {frames}x{vocab} values, got {len}")));
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.vocab..(t + 1) * self.vocab]
    }

    pub fn get(&self, t: usize, k: usize) -> f64 {
        self.data[t * self.vocab + k]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.vocab as u32).to_le_bytes());
        for &x in &self.data {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.frames, self.vocab);
        for t in 0..self.frames {
            let row: Vec<String> = self.row(t).iter().map(|x| x.to_string()).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Emission("missing MIENEMS1 header".into()));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (frames, vocab) = (u32_at(8), u32_at(12));
        let body = &bytes[16..];
        if Some(body.len()) != frames.checked_mul(vocab).and_then(|n| n.checked_mul(4)) {
            return Err(Error::Emission(format!(
                "header declares {frames}x{vocab} but body has {} bytes",
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Self::new(frames, vocab, data)
    }

    pub fn parse_text(src: &str) -> Result<Self> {
        let mut lines = src.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Emission("empty emission text".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|x| x.parse().map_err(|_| Error::Emission(format!("bad header {header:?}"))))
            .collect::<Result<_>>()?;
        let [frames, vocab] = dims[..] else {
            return Err(Error::Emission(format!("header must be `T V`, got {header:?}")));
        };
        let mut data = Vec::with_capacity(frames * vocab);
        for (t, line) in lines.enumerate() {
            let before = data.len();
            for x in line.split_whitespace() {
                data.push(x.parse::<f64>().map_err(|_| Error::Emission(format!("bad number {x:?}")))?);
            }
            if data.len() - before != vocab {
                return Err(Error::Emission(format!("row {t} has {} values, expected {vocab}", data.len() - before)));
            }
        }
        Self::new(frames, vocab, data)
    }
}

pub fn read_emission(path: &Path) -> Result<EmissionMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let parsed = if bytes.starts_with(MAGIC) {
        EmissionMatrix::from_bytes(&bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::Emission("file is neither binary nor UTF-8 text".into()));
        text.and_then(|t| EmissionMatrix::parse_text(&t))
    };
    parsed.map_err(|e| match e {
        Error::Emission(m) => Error::Emission(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_emission(em: &EmissionMatrix, path: &Path) -> Result<()> {
    let text = path.to_string_lossy().ends_with(&format!(".{TEXT_EXT}"));
    let bytes = if text { em.to_text().into_bytes() } else { em.to_bytes() };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Locate the emission file of one utterance: `<id>.ems`, then `<id>.ems.txt`.
pub fn emission_path(dir: &Path, utt_id: &str) -> Result<PathBuf> {
    [BINARY_EXT, TEXT_EXT]
        .iter()
        .map(|ext| dir.join(format!("{utt_id}.{ext}")))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::Emission(format!("no emission file for utterance {utt_id:?} in {}", dir.display())))
}

pub fn load_emission(dir: &Path, utt_id: &str) -> Result<EmissionMatrix> {
    read_emission(&emission_path(dir, utt_id)?)
}
