//! Back-off word n-gram language models in the ARPA format.
//!
//! Training pads every sentence as `<s> w1 .. wk </s>` and builds an
//! interpolated model which is then stored in back-off form, so the ARPA
//! tables reproduce the interpolated distribution exactly. The default
//! smoothing is modified Kneser-Ney (continuation counts for lower orders,
//! three discounts per order). When the closed-form discounts are undefined
//! for an order, as happens on tiny corpora, that order falls back to a
//! single absolute discount.
//!
//! All scores are log10, as in the file format.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use log::warn;

use crate::error::{self, Error, Result};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

/// log10 probability written for `<s>`, which is never predicted.
pub const BOS_LOG10_PROB: f64 = -99.0;
/// log10 probability used for out-of-vocabulary words when a model has no `<unk>`.
pub const MISSING_UNK_LOG10_PROB: f64 = -100.0;

pub type WordId = u32;

/// Probability and back-off weight of one n-gram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NgramEntry {
    pub log10_prob: f64,
    pub log10_backoff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothing {
    /// Interpolated modified Kneser-Ney.
    KneserNey,
    /// Interpolated absolute discounting on raw counts.
    Absolute,
    /// Unigram relative frequencies; `<unk>` receives a pseudo-count of one.
    Mle,
}

impl FromStr for Smoothing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kn" | "kneser-ney" | "modified-kneser-ney" => Ok(Smoothing::KneserNey),
            "absolute" => Ok(Smoothing::Absolute),
            "mle" => Ok(Smoothing::Mle),
            other => Err(Error::InvalidArgument(format!("unknown smoothing {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
struct NgramTable {
    keys: Vec<Vec<WordId>>,
    entries: Vec<NgramEntry>,
    index: HashMap<Vec<WordId>, usize>,
}

impl NgramTable {
    fn insert(&mut self, key: Vec<WordId>, entry: NgramEntry) -> bool {
        if self.index.contains_key(&key) {
            return false;
        }
        self.index.insert(key.clone(), self.keys.len());
        self.keys.push(key);
        self.entries.push(entry);
        true
    }

    fn get(&self, key: &[WordId]) -> Option<&NgramEntry> {
        self.index.get(key).map(|&i| &self.entries[i])
    }

    fn len(&self) -> usize {
        self.keys.len()
    }
}

/// A back-off n-gram model. Immutable once built or loaded.
#[derive(Debug, Clone)]
pub struct ArpaModel {
    vocab: Vec<String>,
    index: HashMap<String, WordId>,
    tables: Vec<NgramTable>,
    unk: Option<WordId>,
}

impl ArpaModel {
    fn empty(order: usize) -> Self {
        ArpaModel {
            vocab: Vec::new(),
            index: HashMap::new(),
            tables: vec![NgramTable::default(); order],
            unk: None,
        }
    }

    fn intern(&mut self, word: &str) -> WordId {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = self.vocab.len() as WordId;
        self.vocab.push(word.to_string());
        self.index.insert(word.to_string(), id);
        if word == UNK {
            self.unk = Some(id);
        }
        id
    }

    /// A unigram model giving every listed token the same probability.
    /// `<s>` is added as an unpredicted history token.
    pub fn uniform<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        let mut model = Self::empty(1);
        let mut words: Vec<&str> = Vec::new();
        for t in tokens {
            let t = t.as_ref();
            if t != BOS && !words.contains(&t) {
                words.push(t);
            }
        }
        if words.is_empty() {
            return Err(Error::InvalidArgument("uniform model needs at least one token".into()));
        }
        let p = -(words.len() as f64).log10();
        for w in words {
            let id = model.intern(w);
            model.tables[0].insert(vec![id], NgramEntry { log10_prob: p, log10_backoff: 0.0 });
        }
        let bos = model.intern(BOS);
        model.tables[0].insert(vec![bos], NgramEntry { log10_prob: BOS_LOG10_PROB, log10_backoff: 0.0 });
        Ok(model)
    }

    pub fn order(&self) -> usize {
        self.tables.len()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    /// Number of n-grams per order, starting at unigrams.
    pub fn counts(&self) -> Vec<usize> {
        self.tables.iter().map(NgramTable::len).collect()
    }

    /// Every predictable word: the vocabulary except `<s>`.
    pub fn predictable_words(&self) -> impl Iterator<Item = &str> {
        self.vocab.iter().map(String::as_str).filter(|w| *w != BOS)
    }

    /// Id of `word`, mapping out-of-vocabulary words to `<unk>`.
    pub fn word_id(&self, word: &str) -> WordId {
        self.index
            .get(word)
            .copied()
            .or(self.unk)
            .unwrap_or(WordId::MAX)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn entry(&self, ngram: &[&str]) -> Option<NgramEntry> {
        if ngram.is_empty() || ngram.len() > self.order() {
            return None;
        }
        let ids: Option<Vec<WordId>> = ngram.iter().map(|w| self.index.get(*w).copied()).collect();
        self.tables[ngram.len() - 1].get(&ids?).copied()
    }

    /// Iterate n-grams of one order (1-based) as word strings.
    pub fn ngrams(&self, order: usize) -> impl Iterator<Item = (Vec<&str>, NgramEntry)> {
        let table = &self.tables[order - 1];
        table.keys.iter().zip(&table.entries).map(move |(k, e)| {
            (k.iter().map(|&id| self.vocab[id as usize].as_str()).collect(), *e)
        })
    }

    /// Back-off query on word ids. Only the last `order - 1` history words matter.
    pub fn score_ids(&self, history: &[WordId], word: WordId) -> f64 {
        let max_history = self.order() - 1;
        let history = &history[history.len().saturating_sub(max_history)..];
        let mut key = Vec::with_capacity(history.len() + 1);
        let mut backoff = 0.0;
        for start in 0..=history.len() {
            let context = &history[start..];
            key.clear();
            key.extend_from_slice(context);
            key.push(word);
            if let Some(e) = self.tables[key.len() - 1].get(&key) {
                return backoff + e.log10_prob;
            }
            if !context.is_empty() {
                if let Some(e) = self.tables[context.len() - 1].get(context) {
                    backoff += e.log10_backoff;
                }
            }
        }
        backoff + MISSING_UNK_LOG10_PROB
    }

    /// log10 P(`</s>` and all words) for one sentence, starting from `<s>`.
    pub fn sentence_log10<S: AsRef<str>>(&self, words: &[S]) -> f64 {
        let mut history = vec![self.word_id(BOS)];
        let mut total = 0.0;
        for w in words.iter().map(|w| self.word_id(w.as_ref())).chain(std::iter::once(self.word_id(EOS))) {
            total += self.score_ids(&history, w);
            history.push(w);
        }
        total
    }

    pub fn to_arpa(&self) -> String {
        let mut s = String::from("\\data\\\n");
        for (n, t) in self.tables.iter().enumerate() {
            let _ = writeln!(s, "ngram {}={}", n + 1, t.len());
        }
        let highest = self.order();
        for (n, t) in self.tables.iter().enumerate() {
            let order = n + 1;
            let _ = write!(s, "\n\\{order}-grams:\n");
            for (key, e) in t.keys.iter().zip(&t.entries) {
                let words: Vec<&str> = key.iter().map(|&id| self.vocab[id as usize].as_str()).collect();
                let _ = write!(s, "{}\t{}", e.log10_prob, words.join(" "));
                if order < highest {
                    let _ = write!(s, "\t{}", e.log10_backoff);
                }
                s.push('\n');
            }
        }
        s.push_str("\n\\end\\\n");
        s
    }

    pub fn parse_arpa(src: &str, origin: &str) -> Result<Self> {
        let mut lines = src.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let bad = |line: usize, msg: String| Error::format(origin, line, msg);

        let mut declared: Vec<usize> = Vec::new();
        let mut cur = loop {
            match lines.next() {
                Some((_, "")) => continue,
                Some((_, "\\data\\")) => break None,
                Some((n, l)) => return Err(bad(n, format!("expected \\data\\, found {l:?}"))),
                None => return Err(bad(0, "missing \\data\\ header".into())),
            }
        };
        // Header counts.
        for (n, l) in lines.by_ref() {
            if l.is_empty() {
                if declared.is_empty() {
                    continue;
                }
                break;
            }
            if l.starts_with('\\') {
                cur = Some((n, l));
                break;
            }
            let rest = l
                .strip_prefix("ngram ")
                .ok_or_else(|| bad(n, format!("expected `ngram N=count`, found {l:?}")))?;
            let (order, count) = rest
                .split_once('=')
                .ok_or_else(|| bad(n, format!("malformed count line {l:?}")))?;
            let order: usize = order.trim().parse().map_err(|_| bad(n, format!("bad order in {l:?}")))?;
            let count: usize = count.trim().parse().map_err(|_| bad(n, format!("bad count in {l:?}")))?;
            if order != declared.len() + 1 {
                return Err(bad(n, format!("n-gram orders must be listed in sequence, got {order}")));
            }
            declared.push(count);
        }
        if declared.is_empty() {
            return Err(bad(0, "no n-gram counts declared".into()));
        }

        let mut model = Self::empty(declared.len());
        let mut section: Option<usize> = None;
        let mut ended = false;
        let mut next = cur.or_else(|| lines.next());
        while let Some((n, l)) = next {
            next = lines.next();
            if l.is_empty() {
                continue;
            }
            if ended {
                return Err(bad(n, "content after \\end\\".into()));
            }
            if l == "\\end\\" {
                ended = true;
                continue;
            }
            if let Some(head) = l.strip_prefix('\\') {
                let order = head
                    .strip_suffix("-grams:")
                    .and_then(|o| o.parse::<usize>().ok())
                    .ok_or_else(|| bad(n, format!("malformed section header {l:?}")))?;
                let expected = section.map_or(1, |s| s + 1);
                if order != expected || order > declared.len() {
                    return Err(bad(n, format!("unexpected section {l:?}")));
                }
                section = Some(order);
                continue;
            }
            let order = section.ok_or_else(|| bad(n, "n-gram outside of a section".into()))?;
            let fields: Vec<&str> = l.split_whitespace().collect();
            let has_backoff = match fields.len().checked_sub(order + 1) {
                Some(0) => false,
                Some(1) => true,
                _ => return Err(bad(n, format!("expected {order} words in {l:?}"))),
            };
            let parse_f = |s: &str| s.parse::<f64>().map_err(|_| bad(n, format!("bad number {s:?}")));
            let log10_prob = parse_f(fields[0])?;
            if log10_prob > 0.0 || log10_prob.is_nan() {
                return Err(bad(n, format!("log10 probability {log10_prob} is above zero")));
            }
            let log10_backoff = if has_backoff { parse_f(fields[order + 1])? } else { 0.0 };
            if !log10_backoff.is_finite() {
                return Err(bad(n, "back-off weight must be finite".into()));
            }
            let key: Vec<WordId> = fields[1..=order].iter().map(|w| model.intern(w)).collect();
            if order > 1 && model.tables[order - 2].get(&key[..order - 1]).is_none() {
                return Err(bad(n, format!("history of {:?} has no {}-gram entry", fields[1..=order].join(" "), order - 1)));
            }
            if !model.tables[order - 1].insert(key, NgramEntry { log10_prob, log10_backoff }) {
                return Err(bad(n, format!("duplicate n-gram {:?}", fields[1..=order].join(" "))));
            }
        }
        if !ended {
            return Err(bad(0, "missing \\end\\".into()));
        }
        for (i, (&want, t)) in declared.iter().zip(&model.tables).enumerate() {
            if want != t.len() {
                return Err(bad(0, format!("{}-gram count declared {want} but found {}", i + 1, t.len())));
            }
        }
        Ok(model)
    }
}

/// Query helper on strings: `<unk>` stands in for unknown words.
pub fn lm_score(model: &ArpaModel, history: &[&str], word: &str) -> f64 {
    let ids: Vec<WordId> = history.iter().map(|w| model.word_id(w)).collect();
    model.score_ids(&ids, model.word_id(word))
}

/// 10^(-mean log10 probability) over all words and end markers.
pub fn perplexity<S: AsRef<str>>(model: &ArpaModel, text: &[S]) -> f64 {
    let mut total = 0.0;
    let mut tokens = 0usize;
    for line in text {
        let words: Vec<&str> = line.as_ref().split_whitespace().collect();
        total += model.sentence_log10(&words);
        tokens += words.len() + 1;
    }
    if tokens == 0 {
        return f64::NAN;
    }
    10f64.powf(-total / tokens as f64)
}

pub fn arpa_read(path: &Path) -> Result<ArpaModel> {
    ArpaModel::parse_arpa(&error::read_to_string(path)?, &path.display().to_string())
}

pub fn arpa_write(model: &ArpaModel, path: &Path) -> Result<()> {
    error::write_string(path, &model.to_arpa())
}

// ---------------------------------------------------------------------------
// Training

/// Discounts for adjusted counts 1, 2 and 3+.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Discount([f64; 3]);

impl Discount {
    fn apply(&self, count: f64) -> f64 {
        let d = match count as u64 {
            0 => 0.0,
            1 => self.0[0],
            2 => self.0[1],
            _ => self.0[2],
        };
        count - d
    }
}

/// Count-of-counts n_1..n_4 for one order.
fn count_of_counts<'a>(counts: impl Iterator<Item = &'a u64>) -> [u64; 5] {
    let mut n = [0u64; 5];
    for &c in counts {
        if (1..5).contains(&c) {
            n[c as usize] += 1;
        }
    }
    n
}

fn absolute_discount(n: &[u64; 5]) -> f64 {
    let y = n[1] as f64 / (n[1] as f64 + 2.0 * n[2] as f64);
    if y.is_finite() && y > 0.0 && y < 1.0 {
        y
    } else {
        0.5
    }
}

fn modified_kn_discount(n: &[u64; 5]) -> Option<Discount> {
    if n[1..].contains(&0) {
        return None;
    }
    let y = n[1] as f64 / (n[1] as f64 + 2.0 * n[2] as f64);
    let mut d = [0.0; 3];
    for j in 1..4 {
        d[j - 1] = j as f64 - (j + 1) as f64 * y * n[j + 1] as f64 / n[j] as f64;
        if !(d[j - 1] > 0.0 && d[j - 1] < j as f64) {
            return None;
        }
    }
    Some(Discount(d))
}

/// Train an n-gram model on whitespace-tokenized sentences.
pub fn lm_train<S: AsRef<str>>(corpus: &[S], order: usize, smoothing: Smoothing) -> Result<ArpaModel> {
    if order < 1 {
        return Err(Error::InvalidArgument("LM order must be at least 1".into()));
    }
    if matches!(smoothing, Smoothing::Mle) && order != 1 {
        return Err(Error::InvalidArgument("mle smoothing supports order 1 only".into()));
    }
    let mut model = ArpaModel::empty(order);
    let unk = model.intern(UNK);
    let bos = model.intern(BOS);
    let eos = model.intern(EOS);

    let mut sentences: Vec<Vec<WordId>> = Vec::new();
    let mut tokens = 0usize;
    for line in corpus {
        let mut s = vec![bos];
        for w in line.as_ref().split_whitespace() {
            s.push(model.intern(w));
            tokens += 1;
        }
        s.push(eos);
        sentences.push(s);
    }
    if tokens == 0 {
        return Err(Error::InvalidArgument("LM corpus has no tokens".into()));
    }

    // Raw counts of every n-gram ending at a predicted position.
    let mut raw: Vec<HashMap<Vec<WordId>, u64>> = vec![HashMap::new(); order];
    for s in &sentences {
        for end in 1..s.len() {
            for n in 1..=order.min(end + 1) {
                *raw[n - 1].entry(s[end + 1 - n..=end].to_vec()).or_default() += 1;
            }
        }
    }

    if matches!(smoothing, Smoothing::Mle) {
        return Ok(train_mle(model, &raw[0], unk));
    }

    // Adjusted counts: continuation counts below the top order for Kneser-Ney,
    // except for n-grams starting with <s>, which cannot be extended left.
    let adjusted: Vec<HashMap<Vec<WordId>, u64>> = match smoothing {
        Smoothing::KneserNey => (0..order)
            .map(|i| {
                if i + 1 == order {
                    return raw[i].clone();
                }
                let mut cont: HashMap<Vec<WordId>, u64> = HashMap::new();
                for key in raw[i + 1].keys() {
                    if key[1] != bos {
                        *cont.entry(key[1..].to_vec()).or_default() += 1;
                    }
                }
                for (key, &c) in &raw[i] {
                    if key[0] == bos {
                        cont.insert(key.clone(), c);
                    }
                }
                cont
            })
            .collect(),
        _ => raw.clone(),
    };

    let discounts: Vec<Discount> = adjusted
        .iter()
        .enumerate()
        .map(|(i, counts)| {
            let n = count_of_counts(counts.values());
            let fallback = || {
                let d = absolute_discount(&n);
                Discount([d, d, d])
            };
            match smoothing {
                Smoothing::KneserNey => modified_kn_discount(&n).unwrap_or_else(|| {
                    let d = fallback();
                    warn!(
                        "modified Kneser-Ney discounts undefined for {}-grams (count-of-counts {:?}); using absolute discount {}",
                        i + 1,
                        &n[1..],
                        d.0[0]
                    );
                    d
                }),
                _ => fallback(),
            }
        })
        .collect();

    // Per-context statistics: denominator and interpolation weight.
    let mut gamma: Vec<HashMap<Vec<WordId>, (f64, f64)>> = vec![HashMap::new(); order];
    for (i, counts) in adjusted.iter().enumerate() {
        let mut stats: HashMap<Vec<WordId>, (f64, [u64; 3])> = HashMap::new();
        for (key, &c) in counts {
            let e = stats.entry(key[..i].to_vec()).or_insert((0.0, [0; 3]));
            e.0 += c as f64;
            e.1[(c.min(3) - 1) as usize] += 1;
        }
        let d = discounts[i].0;
        for (ctx, (denom, nk)) in stats {
            let mass: f64 = (0..3).map(|k| d[k] * nk[k] as f64).sum();
            gamma[i].insert(ctx, (denom, mass / denom));
        }
    }

    // Interpolated probabilities, lowest order first.
    let predictable = model.vocab.len() - 1;
    let uniform = 1.0 / predictable as f64;
    let mut probs: Vec<HashMap<Vec<WordId>, f64>> = vec![HashMap::new(); order];
    for i in 0..order {
        let mut level = HashMap::with_capacity(adjusted[i].len());
        for (key, &c) in &adjusted[i] {
            let (denom, g) = gamma[i][&key[..i]];
            let lower = if i == 0 { uniform } else { probs[i - 1][&key[1..]] };
            level.insert(key.clone(), discounts[i].apply(c as f64) / denom + g * lower);
        }
        if i == 0 {
            let (_, g) = gamma[0][&Vec::new()];
            level.entry(vec![unk]).or_insert(g * uniform);
        }
        probs[i] = level;
    }

    Ok(emit_backoff(model, &probs, &gamma, bos))
}

/// Writes interpolated probabilities in back-off form, sorted by word strings.
fn emit_backoff(
    mut model: ArpaModel,
    probs: &[HashMap<Vec<WordId>, f64>],
    gamma: &[HashMap<Vec<WordId>, (f64, f64)>],
    bos: WordId,
) -> ArpaModel {
    let order = probs.len();
    let words = model.vocab.clone();
    let by_words = |a: &&Vec<WordId>, b: &&Vec<WordId>| {
        a.iter()
            .map(|&id| words[id as usize].as_str())
            .cmp(b.iter().map(|&id| words[id as usize].as_str()))
    };
    for i in 0..order {
        let mut keys: Vec<&Vec<WordId>> = probs[i].keys().collect();
        keys.sort_by(by_words);
        let backoff = |key: &Vec<WordId>| -> f64 {
            if i + 1 == order {
                return 0.0;
            }
            gamma[i + 1].get(key).map_or(0.0, |&(_, g)| g.log10())
        };
        if i == 0 {
            let bos_key = vec![bos];
            model.tables[0].insert(
                bos_key.clone(),
                NgramEntry { log10_prob: BOS_LOG10_PROB, log10_backoff: backoff(&bos_key) },
            );
        }
        for key in keys {
            model.tables[i].insert(
                key.clone(),
                NgramEntry { log10_prob: probs[i][key].log10(), log10_backoff: backoff(key) },
            );
        }
    }
    model
}

fn train_mle(model: ArpaModel, unigrams: &HashMap<Vec<WordId>, u64>, unk: WordId) -> ArpaModel {
    let total: u64 = unigrams.values().sum();
    let denom = (total + 1) as f64;
    let mut probs: HashMap<Vec<WordId>, f64> =
        unigrams.iter().map(|(k, &c)| (k.clone(), c as f64 / denom)).collect();
    *probs.entry(vec![unk]).or_insert(0.0) += 1.0 / denom;
    let bos = model.index[BOS];
    emit_backoff(model, &[probs], &[HashMap::new()], bos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn history_sum(m: &ArpaModel, history: &[&str]) -> f64 {
        m.predictable_words().map(|w| 10f64.powf(lm_score(m, history, w))).sum()
    }

    // Toy corpus traced by hand with absolute discounting:
    // unigram D = 0.2, gamma = 0.1, uniform over {a b c </s> <unk>} = 0.2;
    // bigram D = 0.5, gamma(a) = 0.5, gamma(<s>) = 1/3, gamma(b) = 0.25.
    fn toy() -> ArpaModel {
        lm_train(&["a b", "a c", "b"], 2, Smoothing::Absolute).unwrap()
    }

    #[test]
    fn hand_traced_backoff() {
        let m = toy();
        assert!(close(lm_score(&m, &[], "a"), 0.245f64.log10(), 1e-12));
        assert!(close(lm_score(&m, &[], "c"), 0.12f64.log10(), 1e-12));
        assert!(close(lm_score(&m, &[], "</s>"), 0.37f64.log10(), 1e-12));
        assert!(close(lm_score(&m, &[], "<unk>"), 0.02f64.log10(), 1e-12));
        // Unseen bigram: back-off weight of the history plus the unigram.
        let bo = m.entry(&["a"]).unwrap().log10_backoff;
        assert!(close(bo, 0.5f64.log10(), 1e-12));
        assert!(m.entry(&["a", "a"]).is_none());
        assert!(close(lm_score(&m, &["a"], "a"), bo + 0.245f64.log10(), 1e-12));
        assert!(close(lm_score(&m, &["a"], "b"), 0.3725f64.log10(), 1e-12));
        // OOV takes the <unk> path.
        assert_eq!(lm_score(&m, &[], "zzz"), lm_score(&m, &[], "<unk>"));
        assert_eq!(lm_score(&m, &["zzz"], "a"), lm_score(&m, &[], "a"));
    }

    #[test]
    fn hand_traced_perplexity() {
        let m = toy();
        let p: f64 = (0.5 + 0.245 / 3.0) * 0.3725 * (0.75 + 0.25 * 0.37);
        let want = p.powf(-1.0 / 3.0);
        assert!(close(perplexity(&m, &["a b"]), want, 1e-9));
    }

    #[test]
    fn mle_unigram_with_unk() {
        // Tokens a a b </s>; <unk> holds one pseudo-count.
        let m = lm_train(&["a a b"], 1, Smoothing::Mle).unwrap();
        assert!(close(lm_score(&m, &[], "a"), (2.0f64 / 5.0).log10(), 1e-12));
        assert!(close(lm_score(&m, &[], "b"), (1.0f64 / 5.0).log10(), 1e-12));
        assert!(close(lm_score(&m, &[], "<unk>"), (1.0f64 / 5.0).log10(), 1e-12));
        assert!(close(history_sum(&m, &[]), 1.0, 1e-12));
        assert!(lm_train(&["a"], 2, Smoothing::Mle).is_err());
    }

    #[test]
    fn training_rejects_bad_input() {
        assert!(lm_train(&["a"], 0, Smoothing::KneserNey).is_err());
        assert!(lm_train(&["", "  "], 2, Smoothing::KneserNey).is_err());
        assert!(lm_train::<&str>(&[], 2, Smoothing::KneserNey).is_err());
    }

    #[test]
    fn uniform_perplexity_is_vocab_size() {
        let m = ArpaModel::uniform(&["a", "b", "c", EOS, UNK]).unwrap();
        let ppl = perplexity(&m, &["a b q", "c c", "zz"]);
        assert!(close(ppl, 5.0, 5e-9), "{ppl}");
    }

    #[test]
    fn arpa_errors() {
        let good = "\\data\\\nngram 1=2\nngram 2=1\n\n\\1-grams:\n-0.3\ta\t-0.1\n-0.3\t</s>\t0\n\n\\2-grams:\n-0.2\ta </s>\n\n\\end\\\n";
        let m = ArpaModel::parse_arpa(good, "t").unwrap();
        assert_eq!(m.counts(), vec![2, 1]);
        let count = good.replace("ngram 2=1", "ngram 2=2");
        assert!(ArpaModel::parse_arpa(&count, "t").is_err());
        let dangling = good.replace("-0.2\ta </s>", "-0.2\tb </s>");
        assert!(ArpaModel::parse_arpa(&dangling, "t").is_err());
        let section = good.replace("\\2-grams:", "\\3-grams:");
        assert!(ArpaModel::parse_arpa(&section, "t").is_err());
        let positive = good.replace("-0.3\ta", "0.3\ta");
        assert!(ArpaModel::parse_arpa(&positive, "t").is_err());
        assert!(ArpaModel::parse_arpa(&good.replace("\\end\\", ""), "t").is_err());
        assert!(ArpaModel::parse_arpa("ngram 1=1\n", "t").is_err());
    }

    #[test]
    fn sentence_markers_are_in_vocab() {
        let m = lm_train(&["x y"], 3, Smoothing::KneserNey).unwrap();
        let v = m.vocab();
        for w in [BOS, EOS, UNK, "x", "y"] {
            assert!(v.iter().any(|t| t == w), "{w}");
        }
        assert_eq!(m.entry(&[BOS]).unwrap().log10_prob, BOS_LOG10_PROB);
    }

    // Interpolated probabilities straight from counts, for comparison with
    // the back-off tables.
    fn oracle(corpus: &[String], order: usize, kn: bool, history: &[&str], word: &str) -> f64 {
        let sents: Vec<Vec<String>> = corpus
            .iter()
            .map(|l| {
                let mut s = vec![BOS.to_string()];
                s.extend(l.split_whitespace().map(str::to_string));
                s.push(EOS.to_string());
                s
            })
            .collect();
        let mut vocab: Vec<String> = sents.iter().flatten().filter(|w| *w != BOS).cloned().collect();
        vocab.push(UNK.to_string());
        vocab.sort();
        vocab.dedup();
        let word = if vocab.iter().any(|v| v == word) { word } else { UNK };
        let history: Vec<&str> = history
            .iter()
            .map(|h| if *h == BOS || vocab.iter().any(|v| v == h) { *h } else { UNK })
            .collect();

        let mut raw: HashMap<Vec<String>, u64> = HashMap::new();
        for s in &sents {
            for end in 1..s.len() {
                for n in 1..=order.min(end + 1) {
                    *raw.entry(s[end + 1 - n..=end].to_vec()).or_default() += 1;
                }
            }
        }
        let count = |g: &[String]| -> u64 {
            if !kn || g.len() == order || g[0] == BOS {
                return raw.get(g).copied().unwrap_or(0);
            }
            raw.keys().filter(|k| k.len() == g.len() + 1 && k[1..] == *g).count() as u64
        };
        let discount = |n: usize| -> [f64; 3] {
            let mut cc = [0u64; 5];
            for k in raw.keys().filter(|k| k.len() == n) {
                let c = count(k);
                if (1..5).contains(&c) {
                    cc[c as usize] += 1;
                }
            }
            let y = cc[1] as f64 / (cc[1] as f64 + 2.0 * cc[2] as f64);
            if kn {
                let d: Vec<f64> = (1..4).map(|j| j as f64 - (j + 1) as f64 * y * cc[j + 1] as f64 / cc[j] as f64).collect();
                if d.iter().enumerate().all(|(j, &dj)| dj > 0.0 && dj < (j + 1) as f64) {
                    return [d[0], d[1], d[2]];
                }
            }
            let d = if y > 0.0 && y < 1.0 { y } else { 0.5 };
            [d; 3]
        };

        let max_h = history.len().min(order - 1);
        let mut p = 1.0 / vocab.len() as f64;
        for len in 0..=max_h {
            let h: Vec<String> = history[history.len() - len..].iter().map(|s| s.to_string()).collect();
            let d = discount(len + 1);
            let continuations: Vec<u64> = vocab
                .iter()
                .map(|v| {
                    let mut g = h.clone();
                    g.push(v.clone());
                    count(&g)
                })
                .collect();
            let denom: u64 = continuations.iter().sum();
            if denom == 0 {
                continue;
            }
            let dc = |c: u64| if c == 0 { 0.0 } else { d[(c.min(3) - 1) as usize] };
            let gamma: f64 = continuations.iter().map(|&c| dc(c)).sum::<f64>() / denom as f64;
            let mut g = h.clone();
            g.push(word.to_string());
            let c = count(&g);
            p = (c as f64 - dc(c)) / denom as f64 + gamma * p;
        }
        p
    }

    fn small_corpus() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec("[abcd]( [abcd]){0,5}", 1..8)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn backoff_tables_match_interpolation(corpus in small_corpus(), order in 1usize..4, kn in any::<bool>()) {
            let smoothing = if kn { Smoothing::KneserNey } else { Smoothing::Absolute };
            let m = lm_train(&corpus, order, smoothing).unwrap();
            let words = ["a", "b", "c", "d", EOS, UNK];
            let hists: [&[&str]; 6] = [&[], &[BOS], &["a"], &[BOS, "b"], &["c", "a"], &["d", "d", "b"]];
            for h in hists {
                for w in words {
                    let want = oracle(&corpus, order, kn, h, w).log10();
                    let got = lm_score(&m, h, w);
                    prop_assert!(close(got, want, 1e-9), "P({w}|{h:?}) {got} vs {want}");
                }
            }
        }

        #[test]
        fn every_history_normalizes(corpus in small_corpus(), order in 1usize..5) {
            let m = lm_train(&corpus, order, Smoothing::KneserNey).unwrap();
            let words: Vec<&str> = m.vocab().iter().map(String::as_str).collect();
            let mut hists: Vec<Vec<&str>> = vec![vec![]];
            for _ in 0..order.min(3) {
                let next: Vec<Vec<&str>> = hists
                    .iter()
                    .flat_map(|h| words.iter().map(move |w| { let mut h = h.clone(); h.push(*w); h }))
                    .collect();
                hists.extend(next);
                hists.sort();
                hists.dedup();
            }
            for h in &hists {
                let s = history_sum(&m, h);
                prop_assert!(close(s, 1.0, 1e-6), "history {h:?}: {s}");
            }
        }

        #[test]
        fn arpa_round_trip(corpus in small_corpus(), order in 1usize..5) {
            let m = lm_train(&corpus, order, Smoothing::KneserNey).unwrap();
            let text = m.to_arpa();
            let back = ArpaModel::parse_arpa(&text, "t").unwrap();
            prop_assert_eq!(back.to_arpa(), text);
            prop_assert_eq!(back.counts(), m.counts());
            for n in 1..=order {
                for (g, e) in m.ngrams(n) {
                    let b = back.entry(&g).unwrap();
                    prop_assert!(close(b.log10_prob, e.log10_prob, 1e-9) && close(b.log10_backoff, e.log10_backoff, 1e-9));
                }
            }
        }

        #[test]
        fn higher_order_fits_training_text_better(corpus in small_corpus()) {
            let m4 = lm_train(&corpus, 4, Smoothing::KneserNey).unwrap();
            let m1 = lm_train(&corpus, 1, Smoothing::KneserNey).unwrap();
            prop_assert!(perplexity(&m4, &corpus) <= perplexity(&m1, &corpus) + 1e-9);
        }
    }
}
