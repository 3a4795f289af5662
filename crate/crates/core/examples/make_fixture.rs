//! Regenerate the bundled fixtures under `fixtures/`.
//!
//! `tiny`: five utterances, each a permutation of the same five words, with
//! peaked synthetic emissions in both phoneme and subword columns.
//!
//! `homophone`: utterances whose last word differs from a competitor only in
//! its tone digit. The acoustics lean toward the competitor; the LM context
//! favours the truth.
//!
//! Run with `cargo run -p mien-asr --example make_fixture`.

use std::fs;
use std::path::Path;

use mien_asr::emission::write_emission;
use mien_asr::eval::transcripts_to_text;
use mien_asr::lexicon::{build_lexicon, derive_phoneme_vocab, lexicon_to_text, G2PTable, LexiconEntry, PhonemeVocab};
use mien_asr::lm::{arpa_write, lm_train, Smoothing};
use mien_asr::orthography::InventoryConfig;
use mien_asr::synthetic::{blended_emissions, peaked_emissions};
use mien_asr::tokenizer::{bpe_encode, bpe_train};

const PEAK: f64 = 0.9;
const TINY_BPE_SIZE: usize = 24;

const TINY: [(&str, &str); 5] = [
    ("utt01", "iu mienh baengh ginghgungv nqaang"),
    ("utt02", "mienh nqaang iu baengh ginghgungv"),
    ("utt03", "baengh ginghgungv nqaang mienh iu"),
    ("utt04", "ginghgungv iu mienh nqaang baengh"),
    ("utt05", "nqaang baengh ginghgungv iu mienh"),
];

/// (id, truth, acoustically preferred competitor).
const HOMOPHONE_TEST: [(&str, &str, &str); 4] = [
    ("h01", "yie mienh", "yie mienv"),
    ("h02", "ninh mienv", "ninh mienh"),
    ("h03", "yie mienh", "yie mienv"),
    ("h04", "ninh mienv", "ninh mienh"),
];

const HOMOPHONE_LM_TEXT: [&str; 4] = ["yie mienh", "ninh mienv", "yie mienh", "ninh mienv"];

fn lexicon(words: &[&str]) -> Vec<LexiconEntry> {
    let built = build_lexicon(words.iter().copied(), &G2PTable::builtin(), &InventoryConfig::builtin());
    assert!(built.failures.is_empty(), "{:?}", built.failures);
    built.entries
}

fn labels(text: &str, lex: &[LexiconEntry], vocab: &PhonemeVocab) -> Vec<u32> {
    text.split_whitespace()
        .flat_map(|w| {
            let e = lex.iter().find(|e| e.word == w).unwrap();
            vocab.encode(&e.pron).unwrap()
        })
        .collect()
}

fn corpus_text(rows: &[(&str, &str)]) -> String {
    let owned: Vec<(String, String)> = rows.iter().map(|(i, t)| (i.to_string(), t.to_string())).collect();
    transcripts_to_text(&owned)
}

fn tiny(dir: &Path) {
    fs::create_dir_all(dir.join("emissions_phoneme")).unwrap();
    fs::create_dir_all(dir.join("emissions_subword")).unwrap();
    fs::write(dir.join("corpus.tsv"), corpus_text(&TINY)).unwrap();

    let words: Vec<&str> = TINY.iter().flat_map(|(_, t)| t.split_whitespace()).collect();
    let lex = lexicon(&words);
    let vocab = derive_phoneme_vocab(&lex, false);
    vocab.save(&dir.join("phoneme_vocab.txt")).unwrap();

    let texts: Vec<&str> = TINY.iter().map(|(_, t)| *t).collect();
    let bpe = bpe_train(&texts, TINY_BPE_SIZE).unwrap();
    bpe.save(&dir.join("bpe.model")).unwrap();

    for (id, text) in TINY {
        let em = peaked_emissions(&labels(text, &lex, &vocab), vocab.len(), PEAK).unwrap();
        write_emission(&em, &dir.join(format!("emissions_phoneme/{id}.ems.txt"))).unwrap();
        let em = peaked_emissions(&bpe_encode(text, &bpe), bpe.len(), PEAK).unwrap();
        write_emission(&em, &dir.join(format!("emissions_subword/{id}.ems.txt"))).unwrap();
    }
}

fn homophone(dir: &Path) {
    fs::create_dir_all(dir.join("emissions")).unwrap();
    let rows: Vec<(&str, &str)> = HOMOPHONE_TEST.iter().map(|(i, t, _)| (*i, *t)).collect();
    fs::write(dir.join("corpus.tsv"), corpus_text(&rows)).unwrap();

    let lex = lexicon(&["yie", "ninh", "mienh", "mienv"]);
    fs::write(dir.join("lexicon.txt"), lexicon_to_text(&lex)).unwrap();
    let vocab = derive_phoneme_vocab(&lex, false);
    vocab.save(&dir.join("phoneme_vocab.txt")).unwrap();

    let lm = lm_train(&HOMOPHONE_LM_TEXT, 2, Smoothing::KneserNey).unwrap();
    arpa_write(&lm, &dir.join("lm.arpa")).unwrap();

    for (id, truth, competitor) in HOMOPHONE_TEST {
        let em = blended_emissions(
            &labels(competitor, &lex, &vocab),
            &labels(truth, &lex, &vocab),
            vocab.len(),
            0.5,
            0.4,
        )
        .unwrap();
        write_emission(&em, &dir.join(format!("emissions/{id}.ems.txt"))).unwrap();
    }
}

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    tiny(&root.join("tiny"));
    homophone(&root.join("homophone"));
    println!("fixtures written to {}", root.display());
}
