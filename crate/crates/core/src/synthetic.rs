//! Synthetic emission matrices for fixtures and tests.
//!
//! Layout: one leading blank frame, then for every label
//! [`FRAMES_PER_LABEL`] frames peaked on the label followed by one blank
//! frame. A peaked frame puts `peak` on its target and spreads the rest
//! evenly over the other ids, so greedy decoding recovers the labels exactly
//! whenever `peak` exceeds that share.

use crate::emission::EmissionMatrix;
use crate::error::{Error, Result};
use crate::BLANK_ID;

pub const FRAMES_PER_LABEL: usize = 2;

/// Target ids per frame for a label sequence.
pub fn frame_targets(labels: &[u32]) -> Vec<u32> {
    let mut frames = vec![BLANK_ID];
    for &l in labels {
        frames.extend(std::iter::repeat_n(l, FRAMES_PER_LABEL));
        frames.push(BLANK_ID);
    }
    frames
}

fn row(targets: &[(u32, f64)], vocab: usize) -> Vec<f64> {
    let used: f64 = targets.iter().map(|t| t.1).sum();
    let others = vocab - targets.len();
    let fill = if others == 0 { 0.0 } else { (1.0 - used) / others as f64 };
    let mut r = vec![fill; vocab];
    for &(id, p) in targets {
        r[id as usize] = p;
    }
    r
}

fn check(labels: &[u32], vocab: usize, mass: f64) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&l| l == BLANK_ID || l as usize >= vocab) {
        return Err(Error::InvalidArgument(format!("label {bad} outside [1, {vocab})")));
    }
    if !(mass > 0.0 && mass < 1.0) {
        return Err(Error::InvalidArgument(format!("peak mass {mass} must lie in (0, 1)")));
    }
    Ok(())
}

/// Emissions spelling `labels` with probability `peak` on each target.
pub fn peaked_emissions(labels: &[u32], vocab: usize, peak: f64) -> Result<EmissionMatrix> {
    check(labels, vocab, peak)?;
    let frames = frame_targets(labels);
    let mut probs = Vec::with_capacity(frames.len() * vocab);
    for &f in &frames {
        probs.extend(row(&[(f, peak)], vocab));
    }
    EmissionMatrix::from_probs(frames.len(), vocab, &probs)
}

/// Emissions whose label frames split mass between two equally long label
/// sequences: `p_first` on `first[i]`, `p_second` on `second[i]`. Where both
/// agree the frame carries their sum.
pub fn blended_emissions(first: &[u32], second: &[u32], vocab: usize, p_first: f64, p_second: f64) -> Result<EmissionMatrix> {
    if first.len() != second.len() {
        return Err(Error::InvalidArgument("blended label sequences must have equal length".into()));
    }
    check(first, vocab, p_first + p_second)?;
    check(second, vocab, p_first + p_second)?;
    let peak = p_first + p_second;
    let (a, b) = (frame_targets(first), frame_targets(second));
    let mut probs = Vec::with_capacity(a.len() * vocab);
    for (&x, &y) in a.iter().zip(&b) {
        let targets: Vec<(u32, f64)> = if x == y { vec![(x, peak)] } else { vec![(x, p_first), (y, p_second)] };
        probs.extend(row(&targets, vocab));
    }
    EmissionMatrix::from_probs(a.len(), vocab, &probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::greedy_decode;

    #[test]
    fn greedy_recovers_peaked_labels() {
        for labels in [vec![], vec![1], vec![2, 2, 3], vec![1, 3, 1, 1]] {
            let em = peaked_emissions(&labels, 4, 0.9).unwrap();
            assert_eq!(em.frames(), 1 + 3 * labels.len());
            assert_eq!(greedy_decode(&em), labels);
        }
        assert!(peaked_emissions(&[0], 4, 0.9).is_err());
        assert!(peaked_emissions(&[4], 4, 0.9).is_err());
        assert!(peaked_emissions(&[1], 4, 1.0).is_err());
    }

    #[test]
    fn blended_rows_normalize() {
        let em = blended_emissions(&[1, 2], &[1, 3], 5, 0.5, 0.4).unwrap();
        assert!((em.get(4, 2).exp() - 0.5).abs() < 1e-12);
        assert!((em.get(4, 3).exp() - 0.4).abs() < 1e-12);
        assert!((em.get(1, 1).exp() - 0.9).abs() < 1e-12);
        assert_eq!(greedy_decode(&em), vec![1, 2]);
        assert!(blended_emissions(&[1], &[1, 2], 5, 0.5, 0.4).is_err());
    }
}
