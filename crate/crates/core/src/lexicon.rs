//! Pronunciation lexicon construction.
//!
//! Each syllable is converted by greedy longest match against an
//! IMUS-to-IPA table: the onset against the `[initials]` entries and the
//! rime against the `[rimes]` entries. A tone digit token is appended after
//! every syllable. IPA tokens keep their diacritics and diphthongs stay
//! whole, so `hn` and `n` remain distinct phonemes.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;

use crate::error::{self, Error, Result};
use crate::orthography::{parse_word, InventoryConfig, Syllable, ToneMark};
use crate::text::section_lines;

pub use crate::BLANK_TOKEN;

const BUILTIN_TABLE: &str = include_str!("../data/g2p.tsv");

/// Reference phoneme vocabulary sizes for the full Iu Mien lexicon, with
/// and without non-tone diacritics. Used as soft checks only.
pub const REFERENCE_VOCAB_SIZE: usize = 54;
pub const REFERENCE_STRIPPED_VOCAB_SIZE: usize = 44;

/// Whether a tone digit depends on the syllable being checked (stop coda).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SyllableClass {
    Open,
    Checked,
}

/// Tone digits are the only all-digit tokens.
pub fn is_tone_token(token: &str) -> bool {
    !token.is_empty() && token.bytes().all(|b| b.is_ascii_digit())
}

/// IMUS grapheme to IPA correspondence table.
#[derive(Debug, Clone)]
pub struct G2PTable {
    initials: BTreeMap<String, Vec<String>>,
    rimes: BTreeMap<String, Vec<String>>,
    tones: HashMap<(ToneMark, SyllableClass), String>,
    checked_codas: HashSet<String>,
    max_key_len: usize,
}

impl G2PTable {
    pub fn parse(src: &str, origin: &str) -> Result<Self> {
        let mut initials = BTreeMap::new();
        let mut rimes = BTreeMap::new();
        let mut tones = HashMap::new();
        let mut checked_codas = HashSet::new();
        for line in section_lines(src) {
            let bad = |msg: String| Error::format(origin, line.number, msg);
            match line.section {
                Some(section @ ("initials" | "rimes")) => {
                    let (key, value) = line
                        .text
                        .split_once('\t')
                        .ok_or_else(|| bad("expected grapheme TAB ipa-tokens".into()))?;
                    let key = key.trim();
                    let tokens: Vec<String> = value.split_whitespace().map(str::to_string).collect();
                    if key.is_empty() || !key.chars().all(|c| c.is_ascii_lowercase()) {
                        return Err(bad(format!("grapheme {key:?} must be lowercase a-z")));
                    }
                    if tokens.is_empty() {
                        return Err(bad(format!("grapheme {key:?} maps to no tokens")));
                    }
                    if let Some(t) = tokens.iter().find(|t| is_tone_token(t) || t.as_str() == BLANK_TOKEN) {
                        return Err(bad(format!("IPA token {t:?} clashes with a reserved token")));
                    }
                    let map = if section == "initials" { &mut initials } else { &mut rimes };
                    if map.insert(key.to_string(), tokens).is_some() {
                        return Err(bad(format!("duplicate grapheme {key:?}")));
                    }
                }
                Some("tones") => {
                    let (key, digit) = line
                        .text
                        .split_once('\t')
                        .ok_or_else(|| bad("expected tone-mark TAB digit".into()))?;
                    let (mark, class) = match key.trim().split_once(':') {
                        Some((m, "checked")) => (m, SyllableClass::Checked),
                        Some((_, other)) => return Err(bad(format!("unknown syllable class {other:?}"))),
                        None => (key.trim(), SyllableClass::Open),
                    };
                    let mark = ToneMark::from_label(mark)
                        .ok_or_else(|| bad(format!("unknown tone mark {mark:?}")))?;
                    let digit = digit.trim();
                    if !is_tone_token(digit) {
                        return Err(bad(format!("tone token {digit:?} must be digits")));
                    }
                    if tones.insert((mark, class), digit.to_string()).is_some() {
                        return Err(bad(format!("duplicate tone entry {key:?}")));
                    }
                }
                Some("checked") => {
                    checked_codas.insert(line.text.to_string());
                }
                Some(other) => {
                    return Err(bad(format!("unknown section [{other}]")));
                }
                None => return Err(bad("entry outside of a section".into())),
            }
        }
        for mark in ToneMark::ALL {
            if !tones.contains_key(&(mark, SyllableClass::Open)) {
                return Err(Error::format(
                    origin,
                    0,
                    format!("no tone digit for tone mark {:?}", mark.label()),
                ));
            }
        }
        let max_key_len = initials.keys().chain(rimes.keys()).map(String::len).max().unwrap_or(0);
        Ok(G2PTable {
            initials,
            rimes,
            tones,
            checked_codas,
            max_key_len,
        })
    }

    /// The table shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_TABLE, "builtin g2p table").expect("shipped table is valid")
    }

    pub fn initial_entries(&self) -> &BTreeMap<String, Vec<String>> {
        &self.initials
    }

    pub fn rime_entries(&self) -> &BTreeMap<String, Vec<String>> {
        &self.rimes
    }

    pub fn tone_digit(&self, mark: ToneMark, class: SyllableClass) -> &str {
        self.tones
            .get(&(mark, class))
            .or_else(|| self.tones.get(&(mark, SyllableClass::Open)))
            .map(String::as_str)
            .expect("every tone mark has an open-syllable digit")
    }

    fn syllable_class(&self, syl: &Syllable) -> SyllableClass {
        match syl.coda() {
            Some(c) if self.checked_codas.contains(&c.to_ascii_lowercase()) => SyllableClass::Checked,
            _ => SyllableClass::Open,
        }
    }
}

/// Greedy left-to-right longest match of `span` against `table`. Returns the
/// byte offset of the first untranslatable position on failure.
fn longest_match(
    span: &str,
    table: &BTreeMap<String, Vec<String>>,
    max_key_len: usize,
    out: &mut Vec<String>,
) -> std::result::Result<(), usize> {
    let mut pos = 0;
    while pos < span.len() {
        let longest = max_key_len.min(span.len() - pos);
        let hit = (1..=longest).rev().find_map(|n| table.get(&span[pos..pos + n]).map(|v| (n, v)));
        match hit {
            Some((n, tokens)) => {
                out.extend(tokens.iter().cloned());
                pos += n;
            }
            None => return Err(pos),
        }
    }
    Ok(())
}

/// A word and its phoneme sequence (IPA tokens plus one tone digit per syllable).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconEntry {
    pub word: String,
    pub pron: Vec<String>,
}

impl LexiconEntry {
    pub fn tone_count(&self) -> usize {
        self.pron.iter().filter(|t| is_tone_token(t)).count()
    }
}

/// Convert one word to its pronunciation.
pub fn g2p(word: &str, table: &G2PTable, inv: &InventoryConfig) -> Result<LexiconEntry> {
    let parse = parse_word(word, inv)?;
    let mut pron = Vec::new();
    let mut offset = 0;
    for syl in &parse.syllables {
        let onset = syl.initial().to_ascii_lowercase();
        let rime = syl.rime().to_ascii_lowercase();
        let fail = |at: usize| Error::Untranslatable {
            word: word.to_string(),
            syllable: syl.surface().to_string(),
            offset: offset + at,
        };
        longest_match(&onset, &table.initials, table.max_key_len, &mut pron).map_err(fail)?;
        longest_match(&rime, &table.rimes, table.max_key_len, &mut pron)
            .map_err(|at| fail(onset.len() + at))?;
        pron.push(table.tone_digit(syl.tone(), table.syllable_class(syl)).to_string());
        offset += syl.surface().len();
    }
    Ok(LexiconEntry {
        word: word.to_string(),
        pron,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconFailure {
    pub word: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LexiconBuild {
    pub entries: Vec<LexiconEntry>,
    pub failures: Vec<LexiconFailure>,
}

/// Build a lexicon for the unique words of `words`, in first-seen order.
pub fn build_lexicon<'a, I>(words: I, table: &G2PTable, inv: &InventoryConfig) -> LexiconBuild
where
    I: IntoIterator<Item = &'a str>,
{
    let mut seen = HashSet::new();
    let unique: Vec<&str> = words.into_iter().filter(|w| seen.insert(*w)).collect();
    let results: Vec<_> = unique.par_iter().map(|w| (*w, g2p(w, table, inv))).collect();
    let mut out = LexiconBuild::default();
    for (word, r) in results {
        match r {
            Ok(e) => out.entries.push(e),
            Err(e) => out.failures.push(LexiconFailure {
                word: word.to_string(),
                reason: e.to_string(),
            }),
        }
    }
    out
}

fn is_stripped_mark(c: char) -> bool {
    matches!(c, '\u{0300}'..='\u{036F}')
        || matches!(
            c,
            '\u{02B0}' | '\u{02B1}' | '\u{02B2}' | '\u{02B7}' | '\u{02E0}' | '\u{02E1}' | '\u{02E4}' | '\u{207F}'
        )
}

/// Remove combining diacritics and superscript modifier letters. Tone digits
/// and the length mark are left alone.
pub fn strip_diacritics(token: &str) -> String {
    token.chars().filter(|&c| !is_stripped_mark(c)).collect()
}

/// Phoneme token inventory with the CTC blank at index 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeVocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl PhonemeVocab {
    /// Sort and deduplicate `tokens`, then put the blank in front.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = tokens
            .into_iter()
            .map(Into::into)
            .filter(|t: &String| t != BLANK_TOKEN)
            .collect();
        Self::frozen(std::iter::once(BLANK_TOKEN.to_string()).chain(set).collect())
            .expect("sorted set has no duplicates")
    }

    /// Keep the given order, which must start with the blank.
    pub fn frozen(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(BLANK_TOKEN) {
            return Err(Error::InvalidArgument(format!(
                "phoneme vocabulary must start with {BLANK_TOKEN}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate phoneme token {t:?}")));
            }
        }
        Ok(PhonemeVocab { tokens, index })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Size including the blank.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    /// Number of real phoneme tokens (blank excluded).
    pub fn phoneme_count(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, pron: &[String]) -> Result<Vec<u32>> {
        pron.iter()
            .map(|t| self.id(t).ok_or_else(|| Error::UnknownToken(t.clone())))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn parse(src: &str) -> Result<Self> {
        Self::frozen(src.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&error::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        error::write_string(path, &self.to_text())
    }
}

/// Union of all pronunciation tokens, optionally with non-tone diacritics removed.
pub fn derive_phoneme_vocab(lexicon: &[LexiconEntry], strip: bool) -> PhonemeVocab {
    PhonemeVocab::from_tokens(lexicon.iter().flat_map(|e| e.pron.iter()).filter_map(|t| {
        let t = if strip { strip_diacritics(t) } else { t.clone() };
        (!t.is_empty()).then_some(t)
    }))
}

/// Log how a derived vocabulary compares with the reference sizes.
pub fn report_reference_size(vocab: &PhonemeVocab, stripped: bool) {
    let target = if stripped {
        REFERENCE_STRIPPED_VOCAB_SIZE
    } else {
        REFERENCE_VOCAB_SIZE
    };
    let n = vocab.phoneme_count();
    if n == target {
        info!("phoneme vocabulary has {n} tokens, matching the reference size");
    } else {
        warn!("phoneme vocabulary has {n} tokens; the reference inventory has {target}");
    }
}

pub fn lexicon_to_text(entries: &[LexiconEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        let _ = writeln!(s, "{}\t{}", e.word, e.pron.join(" "));
    }
    s
}

pub fn parse_lexicon(src: &str, origin: &str) -> Result<Vec<LexiconEntry>> {
    let mut out = Vec::new();
    for (i, line) in src.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (word, pron) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(origin, i + 1, "expected word TAB phonemes"))?;
        let pron: Vec<String> = pron.split_whitespace().map(str::to_string).collect();
        if word.trim().is_empty() || pron.is_empty() {
            return Err(Error::format(origin, i + 1, "empty word or pronunciation"));
        }
        out.push(LexiconEntry {
            word: word.trim().to_string(),
            pron,
        });
    }
    Ok(out)
}

pub fn load_lexicon(path: &Path) -> Result<Vec<LexiconEntry>> {
    parse_lexicon(&error::read_to_string(path)?, &path.display().to_string())
}

pub fn save_lexicon(entries: &[LexiconEntry], path: &Path) -> Result<()> {
    error::write_string(path, &lexicon_to_text(entries))
}

pub fn load_g2p_table(path: &Path) -> Result<G2PTable> {
    G2PTable::parse(&error::read_to_string(path)?, &path.display().to_string())
}
