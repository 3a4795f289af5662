//! Edit-distance scoring and the cross-validation protocol.
//!
//! WER and PER share one engine; PER treats tone digits as ordinary
//! phoneme tokens. Corpus rates pool counts within a run, while the final
//! figure averages per-run rates.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{self, Error, Result};
use crate::text::split_utterance_line;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScoreReport {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_length: usize,
    /// Hypothesis length when the reference was empty; such a report's rate
    /// counts every hypothesis token as one error against a length of one.
    pub empty_reference_tokens: usize,
}

impl ScoreReport {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn has_empty_reference(&self) -> bool {
        self.reference_length == 0
    }

    pub fn rate(&self) -> f64 {
        if self.reference_length == 0 {
            self.errors() as f64
        } else {
            self.errors() as f64 / self.reference_length as f64
        }
    }

    /// Pool counts with another report.
    pub fn merge(&mut self, other: &ScoreReport) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.reference_length += other.reference_length;
        self.empty_reference_tokens += other.empty_reference_tokens;
    }

    pub fn summary(&self) -> String {
        format!(
            "S={} D={} I={} N={} rate={:.4}",
            self.substitutions,
            self.deletions,
            self.insertions,
            self.reference_length,
            self.rate()
        )
    }
}

/// Minimal unit-cost alignment. On equal cost the backtrace prefers a
/// match or substitution, then an insertion, then a deletion.
pub fn error_rate<T: PartialEq>(reference: &[T], hyp: &[T]) -> ScoreReport {
    let (n, m) = (reference.len(), hyp.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            d[i][j] = sub.min(d[i][j - 1] + 1).min(d[i - 1][j] + 1);
        }
    }
    let mut r = ScoreReport { reference_length: n, ..ScoreReport::default() };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let diff = usize::from(reference[i - 1] != hyp[j - 1]);
            if d[i][j] == d[i - 1][j - 1] + diff {
                r.substitutions += diff;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && d[i][j] == d[i][j - 1] + 1 {
            r.insertions += 1;
            j -= 1;
        } else {
            r.deletions += 1;
            i -= 1;
        }
    }
    if n == 0 {
        r.empty_reference_tokens = m;
    }
    r
}

/// Lowercase and collapse whitespace.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

/// Arithmetic mean of per-run rates.
pub fn aggregate(reports: &[ScoreReport]) -> Result<f64> {
    mean(&reports.iter().map(ScoreReport::rate).collect::<Vec<_>>())
}

pub fn mean(rates: &[f64]) -> Result<f64> {
    if rates.is_empty() {
        return Err(Error::InvalidArgument("cannot average zero runs".into()));
    }
    Ok(rates.iter().sum::<f64>() / rates.len() as f64)
}

// ---------------------------------------------------------------------------
// Transcripts

/// `(utt-id, text)` pairs in file order.
pub fn parse_transcripts(src: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in src.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = split_utterance_line(line);
        let id = id.ok_or_else(|| Error::format(origin, i + 1, "expected `utt-id<TAB>text`"))?;
        if !seen.insert(id.to_string()) {
            return Err(Error::format(origin, i + 1, format!("duplicate utterance id {id:?}")));
        }
        out.push((id.to_string(), text.trim().to_string()));
    }
    Ok(out)
}

pub fn read_transcripts(path: &Path) -> Result<Vec<(String, String)>> {
    parse_transcripts(&error::read_to_string(path)?, &path.display().to_string())
}

pub fn transcripts_to_text(entries: &[(String, String)]) -> String {
    let mut s = String::new();
    for (id, text) in entries {
        let _ = writeln!(s, "{id}\t{text}");
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusScore {
    pub total: ScoreReport,
    pub per_utterance: Vec<(String, ScoreReport)>,
    /// Reference ids without a hypothesis; scored against an empty one.
    pub missing: Vec<String>,
}

/// Score whitespace-tokenized hypotheses against references, in reference
/// order. Both sides are normalized first.
pub fn score_corpus(refs: &[(String, String)], hyps: &[(String, String)]) -> CorpusScore {
    let by_id: BTreeMap<&str, &str> = hyps.iter().map(|(i, t)| (i.as_str(), t.as_str())).collect();
    let mut total = ScoreReport::default();
    let mut per_utterance = Vec::with_capacity(refs.len());
    let mut missing = Vec::new();
    for (id, r) in refs {
        let h = by_id.get(id.as_str()).copied().unwrap_or_else(|| {
            missing.push(id.clone());
            ""
        });
        let (r, h) = (normalize_text(r), normalize_text(h));
        let rep = error_rate(&r.split_whitespace().collect::<Vec<_>>(), &h.split_whitespace().collect::<Vec<_>>());
        total.merge(&rep);
        per_utterance.push((id.clone(), rep));
    }
    CorpusScore { total, per_utterance, missing }
}

// ---------------------------------------------------------------------------
// Cross-validation

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CvRun {
    pub dev: usize,
    pub test: usize,
    pub train: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CvPlan {
    pub folds: Vec<Vec<String>>,
    pub runs: Vec<CvRun>,
}

impl CvPlan {
    fn ids(&self, folds: &[usize]) -> Vec<String> {
        folds.iter().flat_map(|&f| self.folds[f].iter().cloned()).collect()
    }

    pub fn dev_ids(&self, run: usize) -> Vec<String> {
        self.ids(&[self.runs[run].dev])
    }

    pub fn test_ids(&self, run: usize) -> Vec<String> {
        self.ids(&[self.runs[run].test])
    }

    pub fn train_ids(&self, run: usize) -> Vec<String> {
        self.ids(&self.runs[run].train)
    }

    /// Write `fold_K.txt` and `run_R/{train,dev,test}.txt`, one id per line.
    pub fn write_manifests(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let lines = |ids: &[String]| ids.iter().map(|i| format!("{i}\n")).collect::<String>();
        for (k, fold) in self.folds.iter().enumerate() {
            error::write_string(&dir.join(format!("fold_{k}.txt")), &lines(fold))?;
        }
        for r in 0..self.runs.len() {
            let run_dir = dir.join(format!("run_{r}"));
            std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
            error::write_string(&run_dir.join("train.txt"), &lines(&self.train_ids(r)))?;
            error::write_string(&run_dir.join("dev.txt"), &lines(&self.dev_ids(r)))?;
            error::write_string(&run_dir.join("test.txt"), &lines(&self.test_ids(r)))?;
        }
        Ok(())
    }
}

/// Seeded shuffle, contiguous cut into folds whose sizes differ by at most
/// one (larger folds first), and run `r` using folds `2r` and `2r+1` as dev
/// and test.
pub fn make_cv_plan<S: AsRef<str>>(utt_ids: &[S], n_folds: usize, n_runs: usize, seed: u64) -> Result<CvPlan> {
    if n_folds < 2 {
        return Err(Error::InvalidArgument("need at least two folds".into()));
    }
    if n_runs == 0 || 2 * n_runs > n_folds {
        return Err(Error::InvalidArgument(format!("{n_runs} runs need {} distinct folds, have {n_folds}", 2 * n_runs)));
    }
    if utt_ids.len() < n_folds {
        return Err(Error::InvalidArgument(format!("{} utterances cannot fill {n_folds} folds", utt_ids.len())));
    }
    let mut ids: Vec<String> = utt_ids.iter().map(|s| s.as_ref().to_string()).collect();
    let mut seen = HashSet::new();
    if let Some(dup) = ids.iter().find(|i| !seen.insert(i.as_str())) {
        return Err(Error::InvalidArgument(format!("duplicate utterance id {dup:?}")));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (ids.len() / n_folds, ids.len() % n_folds);
    let mut folds = Vec::with_capacity(n_folds);
    let mut rest = ids.as_slice();
    for k in 0..n_folds {
        let (head, tail) = rest.split_at(base + usize::from(k < extra));
        folds.push(head.to_vec());
        rest = tail;
    }
    let runs = (0..n_runs)
        .map(|r| CvRun {
            dev: 2 * r,
            test: 2 * r + 1,
            train: (0..n_folds).filter(|&f| f != 2 * r && f != 2 * r + 1).collect(),
        })
        .collect();
    Ok(CvPlan { folds, runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn examples() {
        let r = error_rate(&toks("a b c"), &toks("a b c"));
        assert_eq!(r.rate(), 0.0);
        let r = error_rate(&toks("a b c"), &toks("a c"));
        assert_eq!((r.substitutions, r.deletions, r.insertions), (0, 1, 0));
        assert!((r.rate() - 1.0 / 3.0).abs() < 1e-15);
        let r = error_rate(&toks("a"), &toks("b c"));
        assert_eq!((r.substitutions, r.deletions, r.insertions), (1, 0, 1));
        assert_eq!(r.rate(), 2.0);
        let r = error_rate(&toks(""), &toks("x y"));
        assert!(r.has_empty_reference());
        assert_eq!((r.rate(), r.empty_reference_tokens), (2.0, 2));
    }

    #[test]
    fn tie_break_prefers_substitution() {
        // "a b" -> "b c": one sub+sub or del+ins; cost 2 both ways.
        let r = error_rate(&toks("a b"), &toks("b c"));
        assert_eq!(r.errors(), 2);
        assert_eq!(r.substitutions, 2);
    }

    #[test]
    fn aggregation() {
        assert!(aggregate(&[]).is_err());
        assert_eq!(mean(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(mean(&[3.30]).unwrap(), 3.30);
        assert_eq!(mean(&[2.0, 4.0, 6.0]).unwrap(), 4.0);
        let rep = |e, n| ScoreReport { substitutions: e, reference_length: n, ..Default::default() };
        // Per-run rates 0.5 and 0.1, not pooled 6/20.
        assert!((aggregate(&[rep(5, 10), rep(1, 10)]).unwrap() - 0.3).abs() < 1e-15);
        assert!((aggregate(&[rep(1, 2), rep(1, 10)]).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn corpus_scoring() {
        let refs = vec![("u1".to_string(), "A b".to_string()), ("u2".to_string(), "c".to_string())];
        let hyps = vec![("u1".to_string(), "a  b".to_string())];
        let s = score_corpus(&refs, &hyps);
        assert_eq!(s.missing, ["u2"]);
        assert_eq!((s.total.errors(), s.total.reference_length), (1, 3));
        assert!(parse_transcripts("u1\ta\nu1\tb\n", "t").is_err());
        assert!(parse_transcripts("no-tab-here\n", "t").is_err());
        let t = parse_transcripts("u1\ta b \n\nu2\t\n", "t").unwrap();
        assert_eq!(t, vec![("u1".into(), "a b".into()), ("u2".into(), "".into())]);
        assert_eq!(parse_transcripts(&transcripts_to_text(&t), "t").unwrap(), t);
    }

    #[test]
    fn cv_forced_sizes() {
        let ids: Vec<String> = (0..10).map(|i| format!("u{i}")).collect();
        let plan = make_cv_plan(&ids, 10, 3, 1).unwrap();
        assert!(plan.folds.iter().all(|f| f.len() == 1));
        assert_eq!((plan.runs[0].dev, plan.runs[0].test), (0, 1));
        assert_eq!(plan.runs[0].train.len(), 8);
        assert_eq!(plan, make_cv_plan(&ids, 10, 3, 1).unwrap());
        assert!(make_cv_plan(&ids[..9], 10, 3, 1).is_err());
        assert!(make_cv_plan(&ids, 10, 6, 1).is_err());
        assert!(make_cv_plan(&["a", "a"], 2, 1, 1).is_err());
    }

    #[test]
    fn cv_full_corpus_ratio() {
        let ids: Vec<String> = (0..9761).map(|i| format!("utt{i:05}")).collect();
        let plan = make_cv_plan(&ids, 10, 3, 2024).unwrap();
        let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
        assert_eq!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap(), 1);
        for r in 0..3 {
            let (tr, dv, te) = (plan.train_ids(r).len(), plan.dev_ids(r).len(), plan.test_ids(r).len());
            assert_eq!(tr + dv + te, 9761);
            assert!(dv.abs_diff(976) <= 1 && te.abs_diff(976) <= 1 && tr.abs_diff(7809) <= 8);
        }
    }

    fn brute_distance(a: &[u8], b: &[u8]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = brute_distance(ra, rb) + usize::from(x != y);
                sub.min(brute_distance(ra, b) + 1).min(brute_distance(a, rb) + 1)
            }
        }
    }

    proptest! {
        #[test]
        fn distance_matches_recursion(a in prop::collection::vec(0u8..3, 0..6), b in prop::collection::vec(0u8..3, 0..6)) {
            let r = error_rate(&a, &b);
            prop_assert_eq!(r.errors(), brute_distance(&a, &b));
            prop_assert_eq!(r.errors(), error_rate(&b, &a).errors());
            prop_assert_eq!(r.reference_length, a.len());
            // Counts must describe an actual alignment.
            prop_assert_eq!(a.len() - r.deletions + r.insertions, b.len());
        }

        #[test]
        fn cv_partition(n in 10usize..200, folds in 2usize..12, seed in any::<u64>()) {
            prop_assume!(n >= folds);
            let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
            let runs = folds / 2;
            let plan = make_cv_plan(&ids, folds, runs, seed).unwrap();
            let mut all: Vec<String> = plan.folds.iter().flatten().cloned().collect();
            all.sort();
            let mut want = ids.clone();
            want.sort();
            prop_assert_eq!(all, want);
            let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let mut used: Vec<usize> = plan.runs.iter().flat_map(|r| [r.dev, r.test]).collect();
            used.sort();
            used.dedup();
            prop_assert_eq!(used.len(), 2 * runs);
        }
    }
}
