//! Byte-pair-encoding subword tokenizer.
//!
//! Text is split on whitespace and every word starts with a boundary-marked
//! first character (`▁g`, then `i`, `n`, ...). Training repeatedly merges
//! the most frequent adjacent pair; equal counts go to the lexicographically
//! smallest pair. Ids 0 and 1 are reserved for the CTC blank and `<unk>`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use log::warn;

use crate::error::{self, Error, Result};
use crate::{BLANK_ID, BLANK_TOKEN};

pub const BOUNDARY: char = '▁';
pub const UNK_TOKEN: &str = "<unk>";
pub const UNK_ID: u32 = 1;

const HEADER: &str = "#mien-bpe v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    merges: Vec<(String, String)>,
}

fn initial_symbols(word: &str) -> Vec<String> {
    let mut chars = word.chars();
    let Some(first) = chars.next() else {
        return Vec::new();
    };
    std::iter::once(format!("{BOUNDARY}{first}"))
        .chain(chars.map(String::from))
        .collect()
}

fn apply_merge(symbols: &mut Vec<String>, left: &str, right: &str) {
    if symbols.len() < 2 {
        return;
    }
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(std::mem::take(&mut symbols[i]));
            i += 1;
        }
    }
    *symbols = out;
}

/// Train a model with at most `vocab_size` tokens (specials included).
pub fn bpe_train<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<BpeModel> {
    let mut word_counts: BTreeMap<&str, u64> = BTreeMap::new();
    for line in corpus {
        for w in line.as_ref().split_whitespace() {
            *word_counts.entry(w).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(Error::InvalidArgument("BPE corpus has no words".into()));
    }

    let mut words: Vec<(Vec<String>, u64)> = word_counts
        .iter()
        .map(|(w, &c)| (initial_symbols(w), c))
        .collect();
    let alphabet: BTreeSet<String> = words.iter().flat_map(|(s, _)| s.iter().cloned()).collect();
    let base = alphabet.len() + 2;
    if vocab_size <= base {
        return Err(Error::InvalidArgument(format!(
            "vocab size {vocab_size} must exceed the {base} characters and specials"
        )));
    }

    let mut vocab: Vec<String> = vec![BLANK_TOKEN.to_string(), UNK_TOKEN.to_string()];
    vocab.extend(alphabet);
    let mut index: HashMap<String, u32> = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
    let mut merges = Vec::new();

    while vocab.len() < vocab_size {
        let mut counts: HashMap<(&str, &str), u64> = HashMap::new();
        for (symbols, c) in &words {
            for pair in symbols.windows(2) {
                *counts.entry((pair[0].as_str(), pair[1].as_str())).or_default() += c;
            }
        }
        let best = counts
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
        let Some(((left, right), count)) = best else { break };
        if count < 2 {
            break;
        }
        let (left, right) = (left.to_string(), right.to_string());
        for (symbols, _) in &mut words {
            apply_merge(symbols, &left, &right);
        }
        let merged = format!("{left}{right}");
        if !index.contains_key(&merged) {
            index.insert(merged.clone(), vocab.len() as u32);
            vocab.push(merged);
        }
        merges.push((left, right));
    }
    if vocab.len() < vocab_size {
        warn!(
            "BPE stopped at {} tokens: no adjacent pair repeats (requested {vocab_size})",
            vocab.len()
        );
    }
    Ok(BpeModel { vocab, index, merges })
}

impl BpeModel {
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    /// Whether the token begins a new word.
    pub fn starts_word(&self, id: u32) -> bool {
        self.token(id).is_some_and(|t| t.starts_with(BOUNDARY))
    }

    fn encode_word(&self, word: &str, out: &mut Vec<u32>) {
        let mut symbols = initial_symbols(word);
        for (left, right) in &self.merges {
            apply_merge(&mut symbols, left, right);
        }
        out.extend(symbols.iter().map(|s| self.id(s).unwrap_or(UNK_ID)));
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{HEADER}\n[vocab]\n");
        for t in &self.vocab {
            s.push_str(t);
            s.push('\n');
        }
        s.push_str("[merges]\n");
        for (a, b) in &self.merges {
            s.push_str(a);
            s.push(' ');
            s.push_str(b);
            s.push('\n');
        }
        s
    }

    pub fn parse(src: &str, origin: &str) -> Result<Self> {
        let mut lines = src.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == HEADER => {}
            _ => return Err(Error::format(origin, 1, format!("expected header {HEADER:?}"))),
        }
        let mut section = "";
        let mut vocab = Vec::new();
        let mut merges = Vec::new();
        for (i, line) in lines {
            let line = line.trim_end_matches('\r');
            match line {
                "[vocab]" => section = "vocab",
                "[merges]" => section = "merges",
                "" => {}
                _ if section == "vocab" => vocab.push(line.to_string()),
                _ if section == "merges" => {
                    let (a, b) = line
                        .split_once(' ')
                        .ok_or_else(|| Error::format(origin, i + 1, "merge needs two symbols"))?;
                    merges.push((a.to_string(), b.to_string()));
                }
                _ => return Err(Error::format(origin, i + 1, "entry outside of a section")),
            }
        }
        if vocab.first().map(String::as_str) != Some(BLANK_TOKEN)
            || vocab.get(1).map(String::as_str) != Some(UNK_TOKEN)
        {
            return Err(Error::format(origin, 2, "vocab must start with <blk> and <unk>"));
        }
        let mut index = HashMap::new();
        for (i, t) in vocab.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::format(origin, 0, format!("duplicate token {t:?}")));
            }
        }
        for (a, b) in &merges {
            if !index.contains_key(&format!("{a}{b}")) {
                return Err(Error::format(origin, 0, format!("merge {a} {b} has no vocab entry")));
            }
        }
        Ok(BpeModel { vocab, index, merges })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&error::read_to_string(path)?, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        error::write_string(path, &self.to_text())
    }
}

/// Encode whitespace-separated text into token ids.
pub fn bpe_encode(text: &str, model: &BpeModel) -> Vec<u32> {
    let mut out = Vec::new();
    for w in text.split_whitespace() {
        model.encode_word(w, &mut out);
    }
    out
}

/// Turn token ids back into text; blanks are skipped.
pub fn bpe_decode(ids: &[u32], model: &BpeModel) -> Result<String> {
    let mut s = String::new();
    for &id in ids {
        if id == BLANK_ID {
            continue;
        }
        let t = model
            .token(id)
            .ok_or_else(|| Error::InvalidArgument(format!("token id {id} out of range")))?;
        s.push_str(t);
    }
    let s = s.replace(BOUNDARY, " ");
    Ok(s.strip_prefix(' ').unwrap_or(&s).to_string())
}
