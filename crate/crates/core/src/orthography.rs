//! Iu Mien Unified Script (IMUS) syllable structure.
//!
//! Every syllable is written as
//! `initial? + medial? + main + coda? + tone-letter?`, using only the 26
//! basic Latin letters. The tone letter is one of `h v z x c`; a syllable
//! without one carries the mid-level tone.
//!
//! The grapheme inventory lives in a data file (`data/inventory.txt`) so it
//! can be corrected without touching the parser. Parsing prefers the longest
//! initial, then a trailing tone letter, and backtracks whenever that choice
//! does not leave a valid rime. Words are segmented leftmost-longest with
//! backtracking so that a full-coverage parse is found whenever one exists.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use log::warn;

use crate::error::{self, Error, Result};
use crate::text::section_lines;

/// The five tone letters, in the order they are assigned tone digits after
/// the unmarked tone.
pub const TONE_LETTERS: [char; 5] = ['h', 'v', 'z', 'x', 'c'];

const BUILTIN_INVENTORY: &str = include_str!("../data/inventory.txt");

/// Surface tone mark of a syllable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ToneMark {
    /// No tone letter: the mid-level tone.
    Unmarked,
    H,
    V,
    Z,
    X,
    C,
}

impl ToneMark {
    pub const ALL: [ToneMark; 6] = [
        ToneMark::Unmarked,
        ToneMark::H,
        ToneMark::V,
        ToneMark::Z,
        ToneMark::X,
        ToneMark::C,
    ];

    pub fn from_letter(c: char) -> Option<ToneMark> {
        match c.to_ascii_lowercase() {
            'h' => Some(ToneMark::H),
            'v' => Some(ToneMark::V),
            'z' => Some(ToneMark::Z),
            'x' => Some(ToneMark::X),
            'c' => Some(ToneMark::C),
            _ => None,
        }
    }

    pub fn letter(self) -> Option<char> {
        match self {
            ToneMark::Unmarked => None,
            ToneMark::H => Some('h'),
            ToneMark::V => Some('v'),
            ToneMark::Z => Some('z'),
            ToneMark::X => Some('x'),
            ToneMark::C => Some('c'),
        }
    }

    /// Label used in data files: the tone letter, or `-` for the unmarked tone.
    pub fn label(self) -> &'static str {
        match self {
            ToneMark::Unmarked => "-",
            ToneMark::H => "h",
            ToneMark::V => "v",
            ToneMark::Z => "z",
            ToneMark::X => "x",
            ToneMark::C => "c",
        }
    }

    pub fn from_label(s: &str) -> Option<ToneMark> {
        match s {
            "-" | "" => Some(ToneMark::Unmarked),
            _ => {
                let mut chars = s.chars();
                let c = chars.next()?;
                if chars.next().is_some() {
                    return None;
                }
                ToneMark::from_letter(c)
            }
        }
    }
}

/// How a final (rime) splits into medial, main vowel and coda, as byte lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct RimeSplit {
    medial: usize,
    main: usize,
    coda: usize,
}

/// Validated grapheme inventory. Immutable once built.
#[derive(Debug, Clone)]
pub struct InventoryConfig {
    initials: Vec<String>,
    medials: Vec<String>,
    mains: Vec<String>,
    codas: Vec<String>,
    finals: Vec<String>,
    tone_letters: Vec<char>,
    initial_set: HashSet<String>,
    rimes: HashMap<String, RimeSplit>,
    max_initial_len: usize,
    max_final_len: usize,
}

/// Raw slot lists used to build an [`InventoryConfig`] programmatically.
#[derive(Debug, Clone, Default)]
pub struct InventoryParts {
    pub initials: Vec<String>,
    pub medials: Vec<String>,
    pub mains: Vec<String>,
    pub codas: Vec<String>,
    pub finals: Vec<String>,
}

fn check_grapheme(kind: &str, g: &str) -> Result<()> {
    if g.is_empty() {
        return Err(Error::Inventory(format!("empty {kind} grapheme")));
    }
    if !g.chars().all(|c| c.is_ascii_lowercase()) {
        return Err(Error::Inventory(format!(
            "{kind} grapheme {g:?} must use only the basic Latin letters a-z"
        )));
    }
    Ok(())
}

fn check_unique(kind: &str, items: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for g in items {
        check_grapheme(kind, g)?;
        if !seen.insert(g.as_str()) {
            return Err(Error::Inventory(format!("duplicate {kind} grapheme {g:?}")));
        }
    }
    Ok(())
}

impl InventoryConfig {
    pub fn from_parts(parts: InventoryParts) -> Result<Self> {
        Self::build(parts, TONE_LETTERS.to_vec())
    }

    fn build(parts: InventoryParts, tone_letters: Vec<char>) -> Result<Self> {
        let InventoryParts {
            initials,
            medials,
            mains,
            codas,
            finals,
        } = parts;
        check_unique("initial", &initials)?;
        check_unique("medial", &medials)?;
        check_unique("main", &mains)?;
        check_unique("coda", &codas)?;
        check_unique("final", &finals)?;
        if mains.is_empty() {
            return Err(Error::Inventory("no main vowels listed".into()));
        }
        if finals.is_empty() {
            return Err(Error::Inventory("no finals listed".into()));
        }
        let mut sorted_tones = tone_letters.clone();
        sorted_tones.sort_unstable();
        let mut expected = TONE_LETTERS.to_vec();
        expected.sort_unstable();
        if sorted_tones != expected {
            return Err(Error::Inventory(format!(
                "tone letters must be exactly h, v, z, x, c (got {tone_letters:?})"
            )));
        }

        let mut rimes = HashMap::with_capacity(finals.len());
        for f in &finals {
            let split = split_rime(f, &medials, &mains, &codas).ok_or_else(|| {
                Error::Inventory(format!(
                    "final {f:?} cannot be split into medial + main + coda"
                ))
            })?;
            rimes.insert(f.clone(), split);
        }

        Ok(InventoryConfig {
            initial_set: initials.iter().cloned().collect(),
            max_initial_len: initials.iter().map(String::len).max().unwrap_or(0),
            max_final_len: finals.iter().map(String::len).max().unwrap_or(0),
            initials,
            medials,
            mains,
            codas,
            finals,
            tone_letters,
            rimes,
        })
    }

    /// Parse the inventory file format.
    pub fn parse(src: &str, origin: &str) -> Result<Self> {
        let mut parts = InventoryParts::default();
        let mut tones = Vec::new();
        let mut declared: Vec<(String, usize, usize)> = Vec::new();
        for line in section_lines(src) {
            let Some(section) = line.section else {
                return Err(Error::format(origin, line.number, "entry outside of a section"));
            };
            let target = match section {
                "initials" => &mut parts.initials,
                "medials" => &mut parts.medials,
                "mains" => &mut parts.mains,
                "codas" => &mut parts.codas,
                "finals" => &mut parts.finals,
                "tones" => {
                    let mut chars = line.text.chars();
                    match (chars.next(), chars.next()) {
                        (Some(c), None) => tones.push(c),
                        _ => {
                            return Err(Error::format(
                                origin,
                                line.number,
                                format!("tone entry {:?} must be a single letter", line.text),
                            ))
                        }
                    }
                    continue;
                }
                "counts" => {
                    let mut fields = line.text.split_whitespace();
                    let (Some(name), Some(n), None) = (fields.next(), fields.next(), fields.next())
                    else {
                        return Err(Error::format(origin, line.number, "expected `<section> <count>`"));
                    };
                    let n = n.parse::<usize>().map_err(|_| {
                        Error::format(origin, line.number, format!("bad count {n:?}"))
                    })?;
                    declared.push((name.to_string(), n, line.number));
                    continue;
                }
                other => {
                    return Err(Error::format(
                        origin,
                        line.number,
                        format!("unknown section [{other}]"),
                    ))
                }
            };
            if line.text.contains(char::is_whitespace) {
                return Err(Error::format(
                    origin,
                    line.number,
                    format!("grapheme {:?} contains whitespace", line.text),
                ));
            }
            target.push(line.text.to_string());
        }

        let inv = Self::build(parts, tones)?;
        for (name, n, number) in declared {
            let actual = match name.as_str() {
                "initials" => inv.initials.len(),
                "medials" => inv.medials.len(),
                "mains" => inv.mains.len(),
                "codas" => inv.codas.len(),
                "finals" => inv.finals.len(),
                "tones" => inv.tone_letters.len(),
                other => {
                    return Err(Error::format(origin, number, format!("unknown count {other:?}")));
                }
            };
            if actual != n {
                warn!("{origin}: declared {n} {name} but the file lists {actual}");
            }
        }
        Ok(inv)
    }

    /// The inventory shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_INVENTORY, "builtin inventory").expect("shipped inventory is valid")
    }

    pub fn initials(&self) -> &[String] {
        &self.initials
    }
    pub fn medials(&self) -> &[String] {
        &self.medials
    }
    pub fn mains(&self) -> &[String] {
        &self.mains
    }
    pub fn codas(&self) -> &[String] {
        &self.codas
    }
    pub fn finals(&self) -> &[String] {
        &self.finals
    }
    pub fn tone_letters(&self) -> &[char] {
        &self.tone_letters
    }

    pub fn is_initial(&self, s: &str) -> bool {
        self.initial_set.contains(s)
    }

    pub fn is_final(&self, s: &str) -> bool {
        self.rimes.contains_key(s)
    }

    /// Longest possible syllable in bytes.
    fn max_syllable_len(&self) -> usize {
        self.max_initial_len + self.max_final_len + 1
    }

    /// Decompose a lowercase syllable into (initial length, tone present),
    /// or `None` when no decomposition exists.
    fn split_syllable(&self, s: &str) -> Option<(usize, bool)> {
        let longest = self.max_initial_len.min(s.len());
        let candidates = (1..=longest)
            .rev()
            .filter(|&n| self.initial_set.contains(&s[..n]))
            .chain(std::iter::once(0));
        for n in candidates {
            let rest = &s[n..];
            if let Some(last) = rest.chars().last() {
                if ToneMark::from_letter(last).is_some() && self.is_final(&rest[..rest.len() - 1]) {
                    return Some((n, true));
                }
            }
            if self.is_final(rest) {
                return Some((n, false));
            }
        }
        None
    }
}

/// Prefer no medial, then longer medials; longest main vowel first; the coda
/// is whatever remains and must be a listed coda (or empty).
fn split_rime(rime: &str, medials: &[String], mains: &[String], codas: &[String]) -> Option<RimeSplit> {
    let mut medial_opts: Vec<&str> = medials.iter().map(String::as_str).collect();
    medial_opts.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    let mut main_opts: Vec<&str> = mains.iter().map(String::as_str).collect();
    main_opts.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));

    for medial in std::iter::once("").chain(medial_opts) {
        let Some(after_medial) = rime.strip_prefix(medial) else {
            continue;
        };
        for main in &main_opts {
            let Some(coda) = after_medial.strip_prefix(main) else {
                continue;
            };
            if coda.is_empty() || codas.iter().any(|c| c == coda) {
                return Some(RimeSplit {
                    medial: medial.len(),
                    main: main.len(),
                    coda: coda.len(),
                });
            }
        }
    }
    None
}

/// One parsed syllable. Slot accessors return slices of [`Syllable::surface`],
/// so the five slots always concatenate back to the original spelling.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Syllable {
    surface: String,
    // Byte offsets of the ends of initial, medial, main, coda; tone runs to the end.
    ends: [usize; 4],
    tone: ToneMark,
}

impl Syllable {
    pub fn surface(&self) -> &str {
        &self.surface
    }
    pub fn initial(&self) -> &str {
        &self.surface[..self.ends[0]]
    }
    pub fn medial(&self) -> Option<&str> {
        non_empty(&self.surface[self.ends[0]..self.ends[1]])
    }
    pub fn main(&self) -> &str {
        &self.surface[self.ends[1]..self.ends[2]]
    }
    pub fn coda(&self) -> Option<&str> {
        non_empty(&self.surface[self.ends[2]..self.ends[3]])
    }
    pub fn tone(&self) -> ToneMark {
        self.tone
    }
    /// The tone letter as written (empty for the unmarked tone).
    pub fn tone_text(&self) -> &str {
        &self.surface[self.ends[3]..]
    }
    /// Everything but the tone letter.
    pub fn segmental(&self) -> &str {
        &self.surface[..self.ends[3]]
    }
    /// The rime: medial + main + coda.
    pub fn rime(&self) -> &str {
        &self.surface[self.ends[0]..self.ends[3]]
    }
}

fn non_empty(s: &str) -> Option<&str> {
    (!s.is_empty()).then_some(s)
}

impl fmt::Display for Syllable {
    /// `initial,medial,main,coda,tone` with `-` for empty slots.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dash = |s: &str| if s.is_empty() { "-".to_string() } else { s.to_string() };
        write!(
            f,
            "{},{},{},{},{}",
            dash(self.initial()),
            dash(self.medial().unwrap_or("")),
            self.main(),
            dash(self.coda().unwrap_or("")),
            dash(self.tone_text())
        )
    }
}

/// A word segmented into syllables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordParse {
    pub word: String,
    pub syllables: Vec<Syllable>,
}

impl WordParse {
    pub fn surfaces(&self) -> Vec<&str> {
        self.syllables.iter().map(Syllable::surface).collect()
    }
}

fn lowercase_letters(s: &str) -> Option<String> {
    s.chars()
        .all(|c| c.is_ascii_alphabetic())
        .then(|| s.to_ascii_lowercase())
}

fn build_syllable(surface: &str, lower: &str, inv: &InventoryConfig, initial: usize, toned: bool) -> Syllable {
    let rime_end = if toned { lower.len() - 1 } else { lower.len() };
    let split = inv.rimes[&lower[initial..rime_end]];
    let medial_end = initial + split.medial;
    let main_end = medial_end + split.main;
    let coda_end = main_end + split.coda;
    debug_assert_eq!(coda_end, rime_end);
    let tone = if toned {
        ToneMark::from_letter(lower.chars().last().unwrap()).unwrap()
    } else {
        ToneMark::Unmarked
    };
    Syllable {
        surface: surface.to_string(),
        ends: [initial, medial_end, main_end, coda_end],
        tone,
    }
}

/// Parse one syllable into its five slots.
pub fn parse_syllable(s: &str, inv: &InventoryConfig) -> Result<Syllable> {
    let fail = |suffix: &str| Error::Syllable {
        syllable: s.to_string(),
        suffix: suffix.to_string(),
    };
    let lower = lowercase_letters(s).filter(|l| !l.is_empty()).ok_or_else(|| fail(s))?;
    match inv.split_syllable(&lower) {
        Some((initial, toned)) => Ok(build_syllable(s, &lower, inv, initial, toned)),
        None => {
            let longest = (1..=inv.max_initial_len.min(lower.len()))
                .rev()
                .find(|&n| inv.is_initial(&lower[..n]))
                .unwrap_or(0);
            Err(fail(&s[longest..]))
        }
    }
}

/// Segment a word into syllables, leftmost-longest with backtracking.
pub fn parse_word(w: &str, inv: &InventoryConfig) -> Result<WordParse> {
    let lower = lowercase_letters(w)
        .filter(|l| !l.is_empty())
        .ok_or_else(|| Error::Word {
            word: w.to_string(),
            offset: w.find(|c: char| !c.is_ascii_alphabetic()).unwrap_or(0),
        })?;

    struct Search<'a> {
        lower: &'a str,
        inv: &'a InventoryConfig,
        dead: Vec<bool>,
        furthest: usize,
        path: Vec<(usize, usize, bool)>,
    }

    impl Search<'_> {
        fn run(&mut self, pos: usize) -> bool {
            self.furthest = self.furthest.max(pos);
            if pos == self.lower.len() {
                return true;
            }
            if self.dead[pos] {
                return false;
            }
            let max_end = self.lower.len().min(pos + self.inv.max_syllable_len());
            for end in (pos + 1..=max_end).rev() {
                if let Some((initial, toned)) = self.inv.split_syllable(&self.lower[pos..end]) {
                    self.path.push((end, initial, toned));
                    if self.run(end) {
                        return true;
                    }
                    self.path.pop();
                }
            }
            self.dead[pos] = true;
            false
        }
    }

    let mut search = Search {
        lower: &lower,
        inv,
        dead: vec![false; lower.len()],
        furthest: 0,
        path: Vec::new(),
    };
    if !search.run(0) {
        return Err(Error::Word {
            word: w.to_string(),
            offset: search.furthest,
        });
    }
    let mut start = 0;
    let syllables = search
        .path
        .iter()
        .map(|&(end, initial, toned)| {
            let syl = build_syllable(&w[start..end], &lower[start..end], inv, initial, toned);
            start = end;
            syl
        })
        .collect();
    Ok(WordParse {
        word: w.to_string(),
        syllables,
    })
}

/// Result of parsing every whitespace-delimited token of a text.
#[derive(Debug, Clone, Default)]
pub struct CorpusParse {
    pub parsed: Vec<WordParse>,
    /// Tokens with no full-coverage parse, in order of first appearance.
    pub unparseable: Vec<String>,
}

/// Parse every token of `text`; nothing is dropped silently.
pub fn parse_text(text: &str, inv: &InventoryConfig) -> CorpusParse {
    let mut out = CorpusParse::default();
    let mut reported = HashSet::new();
    for token in text.split_whitespace() {
        match parse_word(token, inv) {
            Ok(p) => out.parsed.push(p),
            Err(_) => {
                if reported.insert(token) {
                    out.unparseable.push(token.to_string());
                }
            }
        }
    }
    out
}

/// Load and validate an inventory file.
pub fn load_inventory(path: &Path) -> Result<InventoryConfig> {
    let src = error::read_to_string(path)?;
    InventoryConfig::parse(&src, &path.display().to_string())
}
