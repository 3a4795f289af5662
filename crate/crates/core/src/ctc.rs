//! CTC alignment math in natural-log space.
//!
//! Labels never contain the blank (id 0). The loss of a label sequence that
//! cannot fit into the available frames is `+inf`, so batch scoring never
//! aborts on one bad utterance.

use crate::emission::EmissionMatrix;
use crate::error::{Error, Result};
use crate::BLANK_ID;

/// Stable log(exp(a) + exp(b)); `-inf` is the additive identity.
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Frames needed to emit `labels`: one per label plus a blank between repeats.
pub fn min_frames(labels: &[u32]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check_labels(em: &EmissionMatrix, labels: &[u32]) -> Result<()> {
    for &l in labels {
        if l == BLANK_ID || l as usize >= em.vocab_size() {
            return Err(Error::InvalidArgument(format!(
                "label id {l} outside [1, {})",
                em.vocab_size()
            )));
        }
    }
    Ok(())
}

/// Blank-augmented label sequence: ∅ l1 ∅ l2 .. lL ∅.
fn extend(labels: &[u32]) -> Vec<u32> {
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(BLANK_ID);
    for &l in labels {
        ext.push(l);
        ext.push(BLANK_ID);
    }
    ext
}

/// alpha[t][s]: log-probability of all prefixes of length t+1 ending in state s,
/// including the emission at t.
fn forward(em: &EmissionMatrix, ext: &[u32]) -> Vec<Vec<f64>> {
    let (frames, states) = (em.frames(), ext.len());
    let mut alpha = vec![vec![f64::NEG_INFINITY; states]; frames];
    alpha[0][0] = em.get(0, ext[0] as usize);
    if states > 1 {
        alpha[0][1] = em.get(0, ext[1] as usize);
    }
    for t in 1..frames {
        for s in 0..states {
            let mut a = alpha[t - 1][s];
            if s >= 1 {
                a = log_add(a, alpha[t - 1][s - 1]);
            }
            if s >= 2 && ext[s] != BLANK_ID && ext[s] != ext[s - 2] {
                a = log_add(a, alpha[t - 1][s - 2]);
            }
            alpha[t][s] = a + em.get(t, ext[s] as usize);
        }
    }
    alpha
}

/// beta[t][s]: log-probability of completing from state s at t, excluding the
/// emission at t.
fn backward(em: &EmissionMatrix, ext: &[u32]) -> Vec<Vec<f64>> {
    let (frames, states) = (em.frames(), ext.len());
    let mut beta = vec![vec![f64::NEG_INFINITY; states]; frames];
    beta[frames - 1][states - 1] = 0.0;
    if states > 1 {
        beta[frames - 1][states - 2] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        for s in 0..states {
            let step = |s2: usize| beta[t + 1][s2] + em.get(t + 1, ext[s2] as usize);
            let mut b = step(s);
            if s + 1 < states {
                b = log_add(b, step(s + 1));
            }
            if s + 2 < states && ext[s + 2] != BLANK_ID && ext[s + 2] != ext[s] {
                b = log_add(b, step(s + 2));
            }
            beta[t][s] = b;
        }
    }
    beta
}

fn total(alpha: &[Vec<f64>]) -> f64 {
    let last = alpha.last().unwrap();
    let s = last.len();
    if s == 1 {
        last[0]
    } else {
        log_add(last[s - 1], last[s - 2])
    }
}

/// Negative log-likelihood of `labels` under `em`.
pub fn ctc_loss(em: &EmissionMatrix, labels: &[u32]) -> Result<f64> {
    check_labels(em, labels)?;
    if min_frames(labels) > em.frames() {
        return Ok(f64::INFINITY);
    }
    Ok(-total(&forward(em, &extend(labels))))
}

/// Loss and its gradient with respect to the pre-softmax logits of each
/// frame, row-major `T x V`. The gradient is all zeros when the loss is
/// infinite.
pub fn ctc_loss_grad(em: &EmissionMatrix, labels: &[u32]) -> Result<(f64, Vec<f64>)> {
    check_labels(em, labels)?;
    let (frames, vocab) = (em.frames(), em.vocab_size());
    let mut grad = vec![0.0; frames * vocab];
    if min_frames(labels) > frames {
        return Ok((f64::INFINITY, grad));
    }
    let ext = extend(labels);
    let alpha = forward(em, &ext);
    let beta = backward(em, &ext);
    let log_p = total(&alpha);
    for t in 0..frames {
        let mut occupancy = vec![f64::NEG_INFINITY; vocab];
        for (s, &k) in ext.iter().enumerate() {
            let k = k as usize;
            occupancy[k] = log_add(occupancy[k], alpha[t][s] + beta[t][s]);
        }
        for k in 0..vocab {
            grad[t * vocab + k] = em.get(t, k).exp() - (occupancy[k] - log_p).exp();
        }
    }
    Ok((-log_p, grad))
}

/// Merge repeated ids, then drop blanks.
pub fn collapse(path: &[u32]) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = None;
    for &id in path {
        if Some(id) != prev && id != BLANK_ID {
            out.push(id);
        }
        prev = Some(id);
    }
    out
}

/// Per-frame argmax (lowest id on ties), collapsed.
pub fn greedy_decode(em: &EmissionMatrix) -> Vec<u32> {
    let path: Vec<u32> = (0..em.frames())
        .map(|t| {
            let row = em.row(t);
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best as u32
        })
        .collect();
    collapse(&path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn em(frames: usize, vocab: usize, logits: Vec<f64>) -> EmissionMatrix {
        EmissionMatrix::from_logits(frames, vocab, logits).unwrap()
    }

    // Reference collapse written as a filter over adjacent pairs.
    fn collapse_ref(path: &[u32]) -> Vec<u32> {
        path.iter()
            .enumerate()
            .filter(|&(i, &x)| x != 0 && (i == 0 || path[i - 1] != x))
            .map(|(_, &x)| x)
            .collect()
    }

    fn brute_force_prob(e: &EmissionMatrix, labels: &[u32]) -> f64 {
        let (t, v) = (e.frames(), e.vocab_size());
        let mut sum = 0.0;
        for code in 0..v.pow(t as u32) {
            let mut c = code;
            let path: Vec<u32> = (0..t)
                .map(|_| {
                    let k = (c % v) as u32;
                    c /= v;
                    k
                })
                .collect();
            if collapse_ref(&path) == labels {
                sum += path.iter().enumerate().map(|(i, &k)| e.get(i, k as usize)).sum::<f64>().exp();
            }
        }
        sum
    }

    #[test]
    fn closed_form_examples() {
        let e = em(2, 3, vec![0.3, -0.2, 1.0, 0.7, 0.1, -1.0]);
        let p = |t: usize, k: usize| e.get(t, k).exp();
        assert!((ctc_loss(&e, &[1]).unwrap() - -(p(0, 1) * p(1, 1) + p(0, 1) * p(1, 0) + p(0, 0) * p(1, 1)).ln()).abs() < 1e-12);
        assert!((ctc_loss(&e, &[]).unwrap() - -(e.get(0, 0) + e.get(1, 0))).abs() < 1e-12);
        let single = em(1, 3, vec![0.3, -0.2, 1.0]);
        assert!((ctc_loss(&single, &[2]).unwrap() + single.get(0, 2)).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_invalid_labels() {
        let e = em(2, 3, vec![0.0; 6]);
        assert_eq!(ctc_loss(&e, &[1, 1]).unwrap(), f64::INFINITY);
        assert_eq!(ctc_loss(&e, &[1, 2, 1]).unwrap(), f64::INFINITY);
        assert!(ctc_loss(&e, &[1, 2]).unwrap().is_finite());
        let (loss, grad) = ctc_loss_grad(&e, &[2, 2]).unwrap();
        assert_eq!(loss, f64::INFINITY);
        assert!(grad.iter().all(|&g| g == 0.0));
        assert!(ctc_loss(&e, &[0]).is_err());
        assert!(ctc_loss(&e, &[3]).is_err());
    }

    #[test]
    fn collapse_examples() {
        assert_eq!(collapse(&[1, 1, 0, 1]), vec![1, 1]);
        assert_eq!(collapse(&[0, 0]), Vec::<u32>::new());
        assert_eq!(collapse(&[2, 2, 3, 0, 3, 3]), vec![2, 3, 3]);
    }

    #[test]
    fn greedy_examples() {
        let peaked = |ids: &[usize]| {
            let mut logits = vec![0.0; ids.len() * 3];
            for (t, &k) in ids.iter().enumerate() {
                logits[t * 3 + k] = 10.0;
            }
            em(ids.len(), 3, logits)
        };
        assert_eq!(greedy_decode(&peaked(&[1, 0, 2])), vec![1, 2]);
        assert_eq!(greedy_decode(&peaked(&[0, 0, 0])), Vec::<u32>::new());
        assert_eq!(greedy_decode(&peaked(&[1, 1, 0, 1])), vec![1, 1]);
    }

    fn instance() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<u32>)> {
        (1usize..=6, 2usize..=4).prop_flat_map(|(t, v)| {
            (
                Just(t),
                Just(v),
                prop::collection::vec(-3.0f64..3.0, t * v),
                prop::collection::vec(1u32..v as u32, 0..=3),
            )
        })
    }

    proptest! {
        #[test]
        fn loss_matches_path_enumeration((t, v, logits, labels) in instance()) {
            let e = em(t, v, logits);
            let want = brute_force_prob(&e, &labels);
            let got = (-ctc_loss(&e, &labels).unwrap()).exp();
            prop_assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
        }

        #[test]
        fn gradient_matches_finite_differences((t, v, logits, labels) in instance()) {
            let e = em(t, v, logits.clone());
            let (loss, grad) = ctc_loss_grad(&e, &labels).unwrap();
            prop_assume!(loss.is_finite());
            let eps = 1e-4;
            for i in 0..logits.len() {
                let mut up = logits.clone();
                up[i] += eps;
                let mut down = logits.clone();
                down[i] -= eps;
                let fd = (ctc_loss(&em(t, v, up), &labels).unwrap() - ctc_loss(&em(t, v, down), &labels).unwrap()) / (2.0 * eps);
                let scale = grad[i].abs().max(fd.abs());
                let ok = if scale >= 1e-4 { (grad[i] - fd).abs() <= 1e-3 * scale } else { (grad[i] - fd).abs() <= 1e-7 };
                prop_assert!(ok, "component {i}: analytic {} vs numeric {fd}", grad[i]);
            }
        }

        #[test]
        fn loss_ignores_row_offsets((t, v, logits, labels) in instance(), frame in 0usize..6, shift in -5.0f64..5.0) {
            let frame = frame % t;
            let mut shifted = logits.clone();
            shifted[frame * v..(frame + 1) * v].iter_mut().for_each(|x| *x += shift);
            let a = ctc_loss(&em(t, v, logits), &labels).unwrap();
            let b = ctc_loss(&em(t, v, shifted), &labels).unwrap();
            prop_assert!(a == b || (a - b).abs() <= 1e-9);
        }

        #[test]
        fn collapse_matches_reference(path in prop::collection::vec(0u32..4, 0..12)) {
            prop_assert_eq!(collapse(&path), collapse_ref(&path));
        }

        #[test]
        fn greedy_matches_argmax((t, v, logits, _l) in instance()) {
            let e = em(t, v, logits);
            let path: Vec<u32> = (0..t).map(|i| {
                let row = e.row(i);
                (0..v).fold(0, |b, k| if row[k] > row[b] { k } else { b }) as u32
            }).collect();
            prop_assert_eq!(greedy_decode(&e), collapse_ref(&path));
        }
    }
}
