//! Output-layer initialization from a pre-trained phoneme head.
//!
//! Each target token found among the source row labels receives a bit-exact
//! copy of that source row. All other tokens, and every tone digit, receive
//! seeded uniform values in `[-scale, scale]`. The blank row is copied from
//! the source row labelled `<blk>`, or from source row 0 if no row carries
//! that label.
//!
//! Matrix text format: a header line `V d`, then `V` lines
//! `label v1 .. vd`. Values are `f32` printed in shortest round-trip form.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{self, Error, Result};
use crate::lexicon::{is_tone_token, strip_diacritics, PhonemeVocab};
use crate::{BLANK_ID, BLANK_TOKEN};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    labels: Vec<String>,
    dim: usize,
    rows: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(labels: Vec<String>, dim: usize, rows: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        if rows.len() != labels.len() * dim {
            return Err(Error::InvalidArgument(format!(
                "{} labels x {dim} columns needs {} values, got {}",
                labels.len(),
                labels.len() * dim,
                rows.len()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = labels.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(Error::InvalidArgument(format!("duplicate row label {dup:?}")));
        }
        if let Some(bad) = labels.iter().find(|l| l.is_empty() || l.chars().any(char::is_whitespace)) {
            return Err(Error::InvalidArgument(format!("row label {bad:?} is empty or contains whitespace")));
        }
        Ok(EmbeddingMatrix { labels, dim, rows })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.len(), self.dim);
        for (i, label) in self.labels.iter().enumerate() {
            s.push_str(label);
            for v in self.row(i) {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(src: &str, origin: &str) -> Result<Self> {
        let mut lines = src.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::format(origin, 0, "empty matrix file"))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|x| x.parse().map_err(|_| Error::format(origin, 1, format!("bad header {header:?}"))))
            .collect::<Result<_>>()?;
        let [v, d] = dims[..] else {
            return Err(Error::format(origin, 1, "header must be `V d`"));
        };
        let mut labels = Vec::with_capacity(v);
        let mut rows = Vec::with_capacity(v * d);
        for (i, line) in lines {
            let mut fields = line.split_whitespace();
            labels.push(fields.next().unwrap().to_string());
            let before = rows.len();
            for f in fields {
                rows.push(f.parse::<f32>().map_err(|_| Error::format(origin, i + 1, format!("bad value {f:?}")))?);
            }
            if rows.len() - before != d {
                return Err(Error::format(origin, i + 1, format!("expected {d} values, got {}", rows.len() - before)));
            }
        }
        if labels.len() != v {
            return Err(Error::format(origin, 0, format!("header declares {v} rows, found {}", labels.len())));
        }
        Self::new(labels, d, rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&error::read_to_string(path)?, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        error::write_string(path, &self.to_text())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferReport {
    /// (target token, source row) for every copied non-blank token.
    pub copied: Vec<(String, usize)>,
    /// Target tokens initialized at random.
    pub randomized: Vec<String>,
    /// Source row copied into the blank row.
    pub blank_source: usize,
    /// Copied share of the non-blank target tokens.
    pub coverage: f64,
}

impl TransferReport {
    pub fn to_text(&self) -> String {
        let mut s = format!("coverage\t{:.4}\nblank\t{}\n", self.coverage, self.blank_source);
        for (t, r) in &self.copied {
            let _ = writeln!(s, "copied\t{t}\t{r}");
        }
        for t in &self.randomized {
            let _ = writeln!(s, "random\t{t}");
        }
        s
    }
}

/// Source row for each target id (index 0 is the blank and is left `None`).
/// Tone digits never match.
pub fn match_tokens<S: AsRef<str>>(src_labels: &[S], tgt_vocab: &PhonemeVocab, normalize: bool) -> Vec<Option<usize>> {
    let exact: HashMap<&str, usize> = src_labels
        .iter()
        .enumerate()
        .rev()
        .map(|(i, l)| (l.as_ref(), i))
        .collect();
    let stripped: HashMap<String, usize> = src_labels
        .iter()
        .enumerate()
        .rev()
        .map(|(i, l)| (strip_diacritics(l.as_ref()), i))
        .collect();
    tgt_vocab
        .tokens()
        .iter()
        .enumerate()
        .map(|(id, tok)| {
            if id == BLANK_ID as usize || is_tone_token(tok) {
                return None;
            }
            exact
                .get(tok.as_str())
                .copied()
                .or_else(|| normalize.then(|| stripped.get(&strip_diacritics(tok)).copied()).flatten())
        })
        .collect()
}

/// Build the target output layer. `scale` defaults to `1/sqrt(d)`.
pub fn transfer_init(
    src: &EmbeddingMatrix,
    tgt_vocab: &PhonemeVocab,
    seed: u64,
    scale: Option<f64>,
    normalize: bool,
) -> Result<(EmbeddingMatrix, TransferReport)> {
    if src.is_empty() {
        return Err(Error::InvalidArgument("source matrix has no rows".into()));
    }
    if tgt_vocab.phoneme_count() == 0 {
        return Err(Error::InvalidArgument("target vocabulary is empty".into()));
    }
    let d = src.dim();
    let scale = scale.unwrap_or(1.0 / (d as f64).sqrt());
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("scale {scale} must be positive")));
    }
    let blank_source = src.labels().iter().position(|l| l == BLANK_TOKEN).unwrap_or(0);
    let matches = match_tokens(src.labels(), tgt_vocab, normalize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(tgt_vocab.len() * d);
    let mut copied = Vec::new();
    let mut randomized = Vec::new();
    for (id, tok) in tgt_vocab.tokens().iter().enumerate() {
        if id == BLANK_ID as usize {
            rows.extend_from_slice(src.row(blank_source));
            continue;
        }
        match matches[id] {
            Some(r) => {
                rows.extend_from_slice(src.row(r));
                copied.push((tok.clone(), r));
            }
            None => {
                rows.extend((0..d).map(|_| rng.gen_range(-scale..=scale) as f32));
                randomized.push(tok.clone());
            }
        }
    }
    let coverage = copied.len() as f64 / (copied.len() + randomized.len()) as f64;
    let out = EmbeddingMatrix::new(tgt_vocab.tokens().to_vec(), d, rows)?;
    Ok((out, TransferReport { copied, randomized, blank_source, coverage }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn src() -> EmbeddingMatrix {
        let labels = ["<blk>", "a", "n", "p", "i"].iter().map(|s| s.to_string()).collect();
        let rows = (0..15).map(|i| i as f32 * 0.25 - 1.0).collect();
        EmbeddingMatrix::new(labels, 3, rows).unwrap()
    }

    #[test]
    fn full_overlap_copies_everything() {
        let tgt = PhonemeVocab::from_tokens(["a", "n", "i"]);
        let (m, r) = transfer_init(&src(), &tgt, 7, None, false).unwrap();
        assert_eq!(r.coverage, 1.0);
        assert!(r.randomized.is_empty());
        for (id, tok) in tgt.tokens().iter().enumerate() {
            let s = src().labels().iter().position(|l| l == tok).unwrap();
            assert_eq!(m.row(id).iter().map(|x| x.to_bits()).collect::<Vec<_>>(), src().row(s).iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn disjoint_vocabularies_randomize() {
        let tgt = PhonemeVocab::from_tokens(["x", "y"]);
        let (m, r) = transfer_init(&src(), &tgt, 7, Some(0.1), false).unwrap();
        assert_eq!(r.coverage, 0.0);
        assert_eq!(m.row(0), src().row(0));
        assert_eq!(r.randomized, ["x", "y"]);
        assert!(m.row(1).iter().chain(m.row(2)).all(|v| v.abs() <= 0.1));
    }

    #[test]
    fn half_overlap_is_seeded() {
        let tgt = PhonemeVocab::from_tokens(["a", "n", "q", "z"]);
        let (m1, r1) = transfer_init(&src(), &tgt, 3, None, false).unwrap();
        let (m2, r2) = transfer_init(&src(), &tgt, 3, None, false).unwrap();
        let (m3, _) = transfer_init(&src(), &tgt, 4, None, false).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(m1, m2);
        assert_ne!(m1, m3);
        assert_eq!(r1.coverage, 0.5);
        assert_eq!(r1.copied, [("a".to_string(), 1), ("n".to_string(), 2)]);
    }

    #[test]
    fn diacritics_are_respected_unless_normalizing() {
        let tgt = PhonemeVocab::from_tokens(["n\u{325}"]);
        let labels = ["n"];
        assert_eq!(match_tokens(&labels, &tgt, false), [None, None]);
        assert_eq!(match_tokens(&labels, &tgt, true), [None, Some(0)]);
        let same = PhonemeVocab::from_tokens(["a", "b"]);
        assert_eq!(match_tokens(&["a", "b"], &same, false), [None, Some(0), Some(1)]);
    }

    #[test]
    fn tone_digits_never_match() {
        let labels: Vec<String> = ["<blk>", "1", "2", "a"].iter().map(|s| s.to_string()).collect();
        let m = EmbeddingMatrix::new(labels, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let tgt = PhonemeVocab::from_tokens(["1", "2", "a"]);
        let (_, r) = transfer_init(&m, &tgt, 0, None, true).unwrap();
        assert_eq!(r.randomized, ["1", "2"]);
        assert_eq!(r.copied, [("a".to_string(), 3)]);
    }

    #[test]
    fn invalid_inputs() {
        assert!(EmbeddingMatrix::new(vec!["a".into()], 0, vec![]).is_err());
        assert!(EmbeddingMatrix::new(vec!["a".into(), "a".into()], 1, vec![0.0, 1.0]).is_err());
        assert!(EmbeddingMatrix::new(vec!["a".into()], 2, vec![0.0]).is_err());
        let empty = PhonemeVocab::from_tokens(Vec::<String>::new());
        assert!(transfer_init(&src(), &empty, 0, None, false).is_err());
        let tgt = PhonemeVocab::from_tokens(["a"]);
        assert!(transfer_init(&src(), &tgt, 0, Some(0.0), false).is_err());
    }

    #[test]
    fn matrix_text_round_trip_is_bit_exact() {
        let m = src();
        let rows = vec![0.1f32, -1e-30, 3.4028235e38, f32::MIN_POSITIVE];
        let odd = EmbeddingMatrix::new(vec!["x".into(), "y".into()], 2, rows).unwrap();
        for mat in [m, odd] {
            assert_eq!(EmbeddingMatrix::parse(&mat.to_text(), "t").unwrap(), mat);
        }
        assert!(EmbeddingMatrix::parse("2 1\na 0\n", "t").is_err());
        assert!(EmbeddingMatrix::parse("1 2\na 0\n", "t").is_err());
    }

    proptest! {
        #[test]
        fn report_partitions_target(tokens in prop::collection::btree_set("[a-e]{1,2}|[1-3]", 1..10), seed in any::<u64>()) {
            let tgt = PhonemeVocab::from_tokens(tokens.iter().cloned());
            let source = src();
            let (m, r) = transfer_init(&source, &tgt, seed, None, false).unwrap();
            let mut seen: Vec<&str> = r.copied.iter().map(|(t, _)| t.as_str()).chain(r.randomized.iter().map(String::as_str)).collect();
            seen.sort();
            let mut want: Vec<&str> = tgt.tokens()[1..].iter().map(String::as_str).collect();
            want.sort();
            prop_assert_eq!(seen, want);
            for (t, row) in &r.copied {
                let id = tgt.id(t).unwrap() as usize;
                prop_assert_eq!(m.row(id), source.row(*row));
            }
        }
    }
}
