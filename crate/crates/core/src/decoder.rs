//! CTC prefix beam search with a word language model.
//!
//! Two search spaces share the same machinery:
//!
//! * phoneme mode: label prefixes are constrained to paths through a
//!   pronunciation trie; reaching a word-final node may commit the word
//!   (one hypothesis per homophone) and return to the root;
//! * subword mode: label prefixes are free sequences of BPE tokens; a token
//!   carrying the word-boundary marker commits the pending word.
//!
//! This composes the lexicon and grammar on the fly instead of compiling a
//! static transducer. Every prefix keeps separate blank-ending and
//! label-ending log-probabilities, so repeated labels are merged only across
//! a blank.
//!
//! Hypothesis score: `ac + lm_weight * lm + word_insertion_penalty * |words|`
//! with `ac` and `lm` in natural log. The LM contribution of a word is added
//! when the word is committed; `</s>` is added when the utterance ends.
//! Final rankings break score ties (within [`TIE_TOLERANCE`]) by the
//! lexicographic order of the word sequence.

use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;

use crate::ctc::log_add;
use crate::emission::EmissionMatrix;
use crate::error::{Error, Result};
use crate::lexicon::{LexiconEntry, PhonemeVocab};
use crate::lm::{ArpaModel, WordId, BOS, EOS};
use crate::tokenizer::{BpeModel, BOUNDARY, UNK_ID};
use crate::BLANK_ID;

/// Scores closer than this (relative to their magnitude) rank as equal.
pub const TIE_TOLERANCE: f64 = 1e-9;

const LN_10: f64 = std::f64::consts::LN_10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Subword,
    Phoneme,
}

impl DecodeMode {
    pub fn name(self) -> &'static str {
        match self {
            DecodeMode::Subword => "subword",
            DecodeMode::Phoneme => "phoneme",
        }
    }
}

impl FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subword" => Ok(DecodeMode::Subword),
            "phoneme" => Ok(DecodeMode::Phoneme),
            other => Err(Error::InvalidArgument(format!("unknown decode mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub lm_weight: f64,
    pub word_insertion_penalty: f64,
    /// Number of distinct word sequences returned.
    pub nbest: usize,
    pub mode: DecodeMode,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 32,
            lm_weight: 0.5,
            word_insertion_penalty: 0.0,
            nbest: 1,
            mode: DecodeMode::Phoneme,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::InvalidArgument("beam size must be at least 1".into()));
        }
        if !(self.lm_weight >= 0.0 && self.lm_weight.is_finite()) {
            return Err(Error::InvalidArgument(format!("lm weight {} must be finite and non-negative", self.lm_weight)));
        }
        if !self.word_insertion_penalty.is_finite() {
            return Err(Error::InvalidArgument("word insertion penalty must be finite".into()));
        }
        if self.nbest == 0 {
            return Err(Error::InvalidArgument("nbest must be at least 1".into()));
        }
        Ok(())
    }
}

/// A complete decoding result.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub words: Vec<String>,
    /// Label ids of the best-scoring prefix (subword mode only).
    pub tokens: Vec<u32>,
    pub score_ac: f64,
    pub score_lm: f64,
    pub score: f64,
}

impl Hypothesis {
    pub fn text(&self) -> String {
        self.words.join(" ")
    }
}

// ---------------------------------------------------------------------------
// Pronunciation trie

#[derive(Debug, Clone, Default)]
struct TrieNode {
    children: BTreeMap<u32, usize>,
    words: Vec<u32>,
}

/// Trie over phoneme ids; node 0 is the root.
#[derive(Debug, Clone)]
pub struct PrefixTree {
    nodes: Vec<TrieNode>,
    words: Vec<String>,
    vocab_size: usize,
}

impl PrefixTree {
    /// Nodes excluding the root.
    pub fn node_count(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn child(&self, node: usize, label: u32) -> Option<usize> {
        self.nodes[node].children.get(&label).copied()
    }

    /// Words whose pronunciation ends exactly at `node`.
    pub fn finals(&self, node: usize) -> impl Iterator<Item = &str> {
        self.nodes[node].words.iter().map(|&w| self.words[w as usize].as_str())
    }

    /// Follow a label path from the root.
    pub fn walk(&self, labels: &[u32]) -> Option<usize> {
        labels.iter().try_fold(0, |n, &l| self.child(n, l))
    }
}

pub fn build_prefix_tree(lexicon: &[LexiconEntry], vocab: &PhonemeVocab) -> Result<PrefixTree> {
    let mut words: Vec<String> = lexicon.iter().map(|e| e.word.clone()).collect();
    words.sort();
    words.dedup();
    let word_id: HashMap<&str, u32> = words.iter().enumerate().map(|(i, w)| (w.as_str(), i as u32)).collect();
    let mut nodes = vec![TrieNode::default()];
    for entry in lexicon {
        if entry.pron.is_empty() {
            return Err(Error::InvalidArgument(format!("word {:?} has an empty pronunciation", entry.word)));
        }
        let mut node = 0;
        for token in &entry.pron {
            let id = vocab.id(token).ok_or_else(|| Error::UnknownToken(token.clone()))?;
            if id == BLANK_ID {
                return Err(Error::UnknownToken(token.clone()));
            }
            node = match nodes[node].children.get(&id) {
                Some(&n) => n,
                None => {
                    nodes.push(TrieNode::default());
                    let n = nodes.len() - 1;
                    nodes[node].children.insert(id, n);
                    n
                }
            };
        }
        let w = word_id[entry.word.as_str()];
        if !nodes[node].words.contains(&w) {
            nodes[node].words.push(w);
            nodes[node].words.sort();
        }
    }
    Ok(PrefixTree { nodes, words, vocab_size: vocab.len() })
}

// ---------------------------------------------------------------------------
// Word histories with cached LM scores

#[derive(Debug, Clone, Copy)]
struct HistNode {
    parent: u32,
    word: u32,
    depth: u32,
    /// Natural-log LM score of all committed words.
    lm: f64,
}

struct Histories<'a> {
    lm: &'a ArpaModel,
    words: Vec<String>,
    word_index: HashMap<String, u32>,
    lm_ids: Vec<WordId>,
    nodes: Vec<HistNode>,
    index: HashMap<(u32, u32), u32>,
}

impl<'a> Histories<'a> {
    const ROOT: u32 = 0;

    fn new(lm: &'a ArpaModel) -> Self {
        Histories {
            lm,
            words: Vec::new(),
            word_index: HashMap::new(),
            lm_ids: Vec::new(),
            nodes: vec![HistNode { parent: 0, word: u32::MAX, depth: 0, lm: 0.0 }],
            index: HashMap::new(),
        }
    }

    fn word(&mut self, w: &str) -> u32 {
        if let Some(&id) = self.word_index.get(w) {
            return id;
        }
        let id = self.words.len() as u32;
        self.words.push(w.to_string());
        self.word_index.insert(w.to_string(), id);
        self.lm_ids.push(self.lm.word_id(w));
        id
    }

    fn context(&self, mut hist: u32) -> Vec<WordId> {
        let keep = self.lm.order() - 1;
        let mut ctx = Vec::with_capacity(keep);
        while ctx.len() < keep {
            if hist == Self::ROOT {
                ctx.push(self.lm.word_id(BOS));
                break;
            }
            let n = self.nodes[hist as usize];
            ctx.push(self.lm_ids[n.word as usize]);
            hist = n.parent;
        }
        ctx.reverse();
        ctx
    }

    fn ln_prob(&self, hist: u32, word: WordId) -> f64 {
        self.lm.score_ids(&self.context(hist), word) * LN_10
    }

    fn extend(&mut self, hist: u32, word: &str) -> u32 {
        let w = self.word(word);
        if let Some(&h) = self.index.get(&(hist, w)) {
            return h;
        }
        let parent = self.nodes[hist as usize];
        let lm = parent.lm + self.ln_prob(hist, self.lm_ids[w as usize]);
        let id = self.nodes.len() as u32;
        self.nodes.push(HistNode { parent: hist, word: w, depth: parent.depth + 1, lm });
        self.index.insert((hist, w), id);
        id
    }

    fn final_lm(&self, hist: u32) -> f64 {
        self.nodes[hist as usize].lm + self.ln_prob(hist, self.lm.word_id(EOS))
    }

    fn depth(&self, hist: u32) -> usize {
        self.nodes[hist as usize].depth as usize
    }

    fn lm(&self, hist: u32) -> f64 {
        self.nodes[hist as usize].lm
    }

    fn words_of(&self, mut hist: u32) -> Vec<String> {
        let mut out = Vec::new();
        while hist != Self::ROOT {
            let n = self.nodes[hist as usize];
            out.push(self.words[n.word as usize].clone());
            hist = n.parent;
        }
        out.reverse();
        out
    }
}

// ---------------------------------------------------------------------------
// Search

#[derive(Debug, Clone, Copy)]
struct Mass {
    blank: f64,
    label: f64,
}

impl Mass {
    const ZERO: Mass = Mass { blank: f64::NEG_INFINITY, label: f64::NEG_INFINITY };

    fn total(&self) -> f64 {
        log_add(self.blank, self.label)
    }
}

fn combined(ac: f64, lm: f64, words: usize, cfg: &DecodeConfig) -> f64 {
    ac + cfg.lm_weight * lm + cfg.word_insertion_penalty * words as f64
}

/// Keep the `beam` best entries; ties resolve by key for determinism.
fn prune<K: Ord + Copy>(hyps: HashMap<K, Mass>, beam: usize, score: impl Fn(&K, &Mass) -> f64) -> Vec<(K, Mass)> {
    let mut v: Vec<(f64, K, Mass)> = hyps
        .into_iter()
        .filter(|(_, m)| m.total() > f64::NEG_INFINITY)
        .map(|(k, m)| (score(&k, &m), k, m))
        .collect();
    v.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    v.truncate(beam);
    v.into_iter().map(|(_, k, m)| (k, m)).collect()
}

fn ties(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

/// Order by score, best first; candidates within the tie tolerance of the
/// best remaining score are taken in lexicographic word order. Keeps the
/// first occurrence of each word sequence.
fn rank(mut hyps: Vec<Hypothesis>, nbest: usize) -> Vec<Hypothesis> {
    hyps.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.words.cmp(&b.words)));
    let mut out: Vec<Hypothesis> = Vec::new();
    while !hyps.is_empty() && out.len() < nbest {
        let best = hyps[0].score;
        let tied = hyps.iter().take_while(|h| ties(h.score, best)).count();
        let pick = (0..tied)
            .min_by(|&i, &j| hyps[i].words.cmp(&hyps[j].words))
            .unwrap();
        let h = hyps.remove(pick);
        if !out.iter().any(|o| o.words == h.words) {
            out.push(h);
        }
    }
    out
}

type PhonemeKey = (u32, usize, u32);

/// Lexicon-constrained search. Hypotheses are complete word sequences.
pub fn decode_phoneme(em: &EmissionMatrix, tree: &PrefixTree, lm: &ArpaModel, cfg: &DecodeConfig) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    if tree.is_empty() {
        return Err(Error::InvalidArgument("lexicon is empty".into()));
    }
    if em.vocab_size() != tree.vocab_size() {
        return Err(Error::VocabMismatch { emissions: em.vocab_size(), expected: tree.vocab_size() });
    }
    let mut hist = Histories::new(lm);
    // Key: (history, trie node, last label).
    let mut beam: Vec<(PhonemeKey, Mass)> = vec![((Histories::ROOT, 0, BLANK_ID), Mass { blank: 0.0, label: f64::NEG_INFINITY })];

    for t in 0..em.frames() {
        let row = em.row(t);
        let mut next: HashMap<PhonemeKey, Mass> = HashMap::new();
        for &((h, node, last), m) in &beam {
            let total = m.total();
            let e = next.entry((h, node, last)).or_insert(Mass::ZERO);
            e.blank = log_add(e.blank, total + row[BLANK_ID as usize]);
            if last != BLANK_ID {
                e.label = log_add(e.label, m.label + row[last as usize]);
            }
            for (&c, &child) in &tree.nodes[node].children {
                let p = if c == last { m.blank } else { total } + row[c as usize];
                if p == f64::NEG_INFINITY {
                    continue;
                }
                let e = next.entry((h, child, c)).or_insert(Mass::ZERO);
                e.label = log_add(e.label, p);
                for &w in &tree.nodes[child].words {
                    let h2 = hist.extend(h, &tree.words[w as usize]);
                    let e = next.entry((h2, 0, c)).or_insert(Mass::ZERO);
                    e.label = log_add(e.label, p);
                }
            }
        }
        beam = prune(next, cfg.beam_size, |&(h, _, _), m| combined(m.total(), hist.lm(h), hist.depth(h), cfg));
    }

    // Complete hypotheses end at the root; pronunciation variants of one
    // word sequence are summed.
    let mut complete: BTreeMap<u32, f64> = BTreeMap::new();
    for ((h, node, _), m) in beam {
        if node == 0 {
            let e = complete.entry(h).or_insert(f64::NEG_INFINITY);
            *e = log_add(*e, m.total());
        }
    }
    let hyps = complete
        .into_iter()
        .map(|(h, ac)| {
            let lm = hist.final_lm(h);
            Hypothesis {
                words: hist.words_of(h),
                tokens: Vec::new(),
                score_ac: ac,
                score_lm: lm,
                score: combined(ac, lm, hist.depth(h), cfg),
            }
        })
        .collect();
    Ok(rank(hyps, cfg.nbest))
}

#[derive(Debug, Clone)]
struct Prefix {
    parent: u32,
    token: u32,
    hist: u32,
    pending: String,
}

/// Free subword search; words are delimited by the boundary marker.
pub fn decode_subword(em: &EmissionMatrix, bpe: &BpeModel, lm: &ArpaModel, cfg: &DecodeConfig) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    if em.vocab_size() != bpe.len() {
        return Err(Error::VocabMismatch { emissions: em.vocab_size(), expected: bpe.len() });
    }
    let mut hist = Histories::new(lm);
    let mut prefixes = vec![Prefix { parent: 0, token: BLANK_ID, hist: Histories::ROOT, pending: String::new() }];
    let mut children: HashMap<(u32, u32), u32> = HashMap::new();
    let labels: Vec<(u32, bool, String)> = (0..bpe.len() as u32)
        .filter(|&id| id != BLANK_ID && id != UNK_ID)
        .map(|id| {
            let tok = bpe.token(id).unwrap_or_default();
            let starts = tok.starts_with(BOUNDARY);
            (id, starts, tok.trim_start_matches(BOUNDARY).to_string())
        })
        .collect();

    let mut beam: Vec<(u32, Mass)> = vec![(0, Mass { blank: 0.0, label: f64::NEG_INFINITY })];
    for t in 0..em.frames() {
        let row = em.row(t);
        let mut next: HashMap<u32, Mass> = HashMap::new();
        for &(p, m) in &beam {
            let total = m.total();
            let last = prefixes[p as usize].token;
            let e = next.entry(p).or_insert(Mass::ZERO);
            e.blank = log_add(e.blank, total + row[BLANK_ID as usize]);
            if last != BLANK_ID {
                e.label = log_add(e.label, m.label + row[last as usize]);
            }
            for (c, starts, piece) in &labels {
                let mass = if *c == last { m.blank } else { total } + row[*c as usize];
                if mass == f64::NEG_INFINITY {
                    continue;
                }
                let child = match children.get(&(p, *c)) {
                    Some(&id) => id,
                    None => {
                        let parent = &prefixes[p as usize];
                        let (h, pending) = if *starts && !parent.pending.is_empty() {
                            let pending = parent.pending.clone();
                            (hist.extend(parent.hist, &pending), piece.clone())
                        } else {
                            (parent.hist, format!("{}{}", parent.pending, piece))
                        };
                        let id = prefixes.len() as u32;
                        prefixes.push(Prefix { parent: p, token: *c, hist: h, pending });
                        children.insert((p, *c), id);
                        id
                    }
                };
                let e = next.entry(child).or_insert(Mass::ZERO);
                e.label = log_add(e.label, mass);
            }
        }
        beam = prune(next, cfg.beam_size, |&p, m| {
            let h = prefixes[p as usize].hist;
            combined(m.total(), hist.lm(h), hist.depth(h), cfg)
        });
    }

    let mut hyps = Vec::with_capacity(beam.len());
    for (p, m) in beam {
        let prefix = prefixes[p as usize].clone();
        let h = if prefix.pending.is_empty() { prefix.hist } else { hist.extend(prefix.hist, &prefix.pending) };
        let mut tokens = Vec::new();
        let mut cur = p;
        while cur != 0 {
            tokens.push(prefixes[cur as usize].token);
            cur = prefixes[cur as usize].parent;
        }
        tokens.reverse();
        let ac = m.total();
        let lm = hist.final_lm(h);
        hyps.push(Hypothesis {
            words: hist.words_of(h),
            tokens,
            score_ac: ac,
            score_lm: lm,
            score: combined(ac, lm, hist.depth(h), cfg),
        });
    }
    Ok(rank(hyps, cfg.nbest))
}

/// Mode-dispatching front end over the two searches.
pub enum Decoder<'a> {
    Subword { bpe: &'a BpeModel, lm: &'a ArpaModel },
    Phoneme { tree: &'a PrefixTree, lm: &'a ArpaModel },
}

impl Decoder<'_> {
    pub fn decode(&self, em: &EmissionMatrix, cfg: &DecodeConfig) -> Result<Vec<Hypothesis>> {
        match self {
            Decoder::Subword { bpe, lm } => decode_subword(em, bpe, lm, cfg),
            Decoder::Phoneme { tree, lm } => decode_phoneme(em, tree, lm, cfg),
        }
    }
}

// ---------------------------------------------------------------------------
// Weight tuning

pub const LM_WEIGHT_GRID: [f64; 6] = [0.0, 0.25, 0.5, 1.0, 1.5, 2.0];
pub const WIP_GRID: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneResult {
    pub lm_weight: f64,
    pub word_insertion_penalty: f64,
    pub error_rate: f64,
}

/// Grid search minimizing `error_rate(lm_weight, wip)`; the first grid point
/// wins ties.
pub fn tune_weights(
    lm_grid: &[f64],
    wip_grid: &[f64],
    mut error_rate: impl FnMut(f64, f64) -> Result<f64>,
) -> Result<TuneResult> {
    let mut best: Option<TuneResult> = None;
    for &lm_weight in lm_grid {
        for &wip in wip_grid {
            let rate = error_rate(lm_weight, wip)?;
            if best.is_none_or(|b| rate < b.error_rate) {
                best = Some(TuneResult { lm_weight, word_insertion_penalty: wip, error_rate: rate });
            }
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("empty tuning grid".into()))
}
