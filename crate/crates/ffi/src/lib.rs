//! C ABI over `mien-asr`.
//!
//! Conventions:
//! - Every fallible function returns a [`MienStatus`]; results go through
//!   out-pointers that are written only on success.
//! - On failure the message is kept per thread and read with
//!   [`mien_last_error`]; it stays valid until the next failing call on the
//!   same thread.
//! - Handles are opaque and released with their `_free` function. Strings
//!   returned through `char**` are released with [`mien_string_free`].
//! - Emission matrices are row-major natural-log probabilities, `frames x
//!   vocab`, blank in column 0.
//! - Strings are NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mien_asr::ctc;
use mien_asr::decoder::{build_prefix_tree, DecodeConfig, DecodeMode, Decoder, PrefixTree};
use mien_asr::emission::EmissionMatrix;
use mien_asr::eval::error_rate;
use mien_asr::lexicon::{g2p, load_g2p_table, load_lexicon, G2PTable, PhonemeVocab};
use mien_asr::lm::{arpa_read, arpa_write, lm_train, ArpaModel, Smoothing};
use mien_asr::orthography::{load_inventory, parse_word, InventoryConfig};
use mien_asr::tokenizer::{bpe_decode, bpe_encode, BpeModel};
use mien_asr::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MienStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    InvalidArgument = 5,
    /// Output buffer too small; the required length was still written.
    BufferTooSmall = 6,
    Panic = 7,
}

pub struct MienInventory(InventoryConfig);
pub struct MienG2p(G2PTable);
pub struct MienLm(ArpaModel);
pub struct MienBpe(BpeModel);

enum DecoderInner {
    Phoneme { tree: PrefixTree, lm: ArpaModel },
    Subword { bpe: BpeModel, lm: ArpaModel },
}

pub struct MienDecoder(DecoderInner);

/// Edit counts of one scored pair.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MienScore {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_length: usize,
    pub rate: f64,
}

/// Search parameters; see [`mien_decode_params_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MienDecodeParams {
    pub beam_size: usize,
    pub lm_weight: f64,
    pub word_insertion_penalty: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(MienStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => MienStatus::Io,
            Error::Format { .. } => MienStatus::Format,
            _ => MienStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(MienStatus::InvalidArgument, msg.into())
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MienStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MienStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MienStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(MienStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(MienStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(MienStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out<T>(p: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(Failure(MienStatus::NullPointer, format!("{what} is null")));
    }
    p.write(value);
    Ok(())
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(MienStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_string(p: *mut *mut c_char, s: String, what: &str) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| invalid("result contains NUL"))?;
    out(p, c.into_raw(), what)
}

unsafe fn out_ids(ids: &[u32], buf: *mut u32, cap: usize, len: *mut usize) -> Result<(), Failure> {
    out(len, ids.len(), "len")?;
    if ids.len() > cap {
        return Err(Failure(MienStatus::BufferTooSmall, format!("{} ids need a buffer of that size, got {cap}", ids.len())));
    }
    if !ids.is_empty() {
        if buf.is_null() {
            return Err(Failure(MienStatus::NullPointer, "ids buffer is null".into()));
        }
        ptr::copy_nonoverlapping(ids.as_ptr(), buf, ids.len());
    }
    Ok(())
}

unsafe fn emissions(logprobs: *const f64, frames: usize, vocab: usize) -> Result<EmissionMatrix, Failure> {
    let n = frames.checked_mul(vocab).ok_or_else(|| invalid("emission size overflows"))?;
    let data = slice(logprobs, n, "logprobs")?;
    Ok(EmissionMatrix::new(frames, vocab, data.to_vec())?)
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

// ---------------------------------------------------------------------------
// Errors and strings

/// Message of the last failure on this thread; empty if none. Owned by the
/// library.
#[no_mangle]
pub extern "C" fn mien_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn mien_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---------------------------------------------------------------------------
// Orthography and G2P

/// # Safety
/// Out-pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mien_inventory_builtin(out_inv: *mut *mut MienInventory) -> MienStatus {
    guard(|| out(out_inv, boxed(MienInventory(InventoryConfig::builtin())), "out"))
}

/// # Safety
/// `path` must be a valid C string and out-pointers valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mien_inventory_load(path: *const c_char, out_inv: *mut *mut MienInventory) -> MienStatus {
    guard(|| {
        let inv = load_inventory(Path::new(text(path, "path")?))?;
        out(out_inv, boxed(MienInventory(inv)), "out")
    })
}

/// # Safety
/// `inv` must be null or a live inventory handle.
#[no_mangle]
pub unsafe extern "C" fn mien_inventory_free(inv: *mut MienInventory) {
    free(inv)
}

/// Decompose a word; one `initial,medial,main,coda,tone` group per syllable,
/// space separated, `-` for empty slots.
///
/// # Safety
/// Pointers must be valid; the out-pointer receives a string to free with
/// [`mien_string_free`].
#[no_mangle]
pub unsafe extern "C" fn mien_parse_word(
    inv: *const MienInventory,
    word: *const c_char,
    out_text: *mut *mut c_char,
) -> MienStatus {
    guard(|| {
        let parse = parse_word(text(word, "word")?, &handle(inv, "inventory")?.0)?;
        let groups: Vec<String> = parse.syllables.iter().map(|s| s.to_string()).collect();
        out_string(out_text, groups.join(" "), "out")
    })
}

/// # Safety
/// Out-pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mien_g2p_builtin(out_table: *mut *mut MienG2p) -> MienStatus {
    guard(|| out(out_table, boxed(MienG2p(G2PTable::builtin())), "out"))
}

/// # Safety
/// `path` must be a valid C string and out-pointers valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mien_g2p_load(path: *const c_char, out_table: *mut *mut MienG2p) -> MienStatus {
    guard(|| {
        let table = load_g2p_table(Path::new(text(path, "path")?))?;
        out(out_table, boxed(MienG2p(table)), "out")
    })
}

/// # Safety
/// `table` must be null or a live G2P handle.
#[no_mangle]
pub unsafe extern "C" fn mien_g2p_free(table: *mut MienG2p) {
    free(table)
}

/// Space-separated pronunciation of `word`.
///
/// # Safety
/// Pointers must be valid; the out-pointer receives a string to free with
/// [`mien_string_free`].
#[no_mangle]
pub unsafe extern "C" fn mien_g2p(
    table: *const MienG2p,
    inv: *const MienInventory,
    word: *const c_char,
    out_pron: *mut *mut c_char,
) -> MienStatus {
    guard(|| {
        let entry = g2p(text(word, "word")?, &handle(table, "table")?.0, &handle(inv, "inventory")?.0)?;
        out_string(out_pron, entry.pron.join(" "), "out")
    })
}

// ---------------------------------------------------------------------------
// Language model

/// # Safety
/// `path` must be a valid C string and out-pointers valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mien_lm_load(path: *const c_char, out_lm: *mut *mut MienLm) -> MienStatus {
    guard(|| {
        let lm = arpa_read(Path::new(text(path, "path")?))?;
        out(out_lm, boxed(MienLm(lm)), "out")
    })
}

/// Train on newline-separated sentences. `smoothing` is `kn`, `absolute` or
/// `mle`.
///
/// # Safety
/// Strings must be valid C strings and out-pointers valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mien_lm_train(
    corpus: *const c_char,
    order: usize,
    smoothing: *const c_char,
    out_lm: *mut *mut MienLm,
) -> MienStatus {
    guard(|| {
        let smoothing: Smoothing = text(smoothing, "smoothing")?.parse()?;
        let lines: Vec<&str> = text(corpus, "corpus")?.lines().collect();
        let lm = lm_train(&lines, order, smoothing)?;
        out(out_lm, boxed(MienLm(lm)), "out")
    })
}

/// # Safety
/// `lm` must be a live handle and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn mien_lm_write(lm: *const MienLm, path: *const c_char) -> MienStatus {
    guard(|| Ok(arpa_write(&handle(lm, "lm")?.0, Path::new(text(path, "path")?))?))
}

/// log10 probability of a whitespace-separated sentence with both markers.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mien_lm_sentence_log10(lm: *const MienLm, sentence: *const c_char, out_score: *mut f64) -> MienStatus {
    guard(|| {
        let words: Vec<&str> = text(sentence, "sentence")?.split_whitespace().collect();
        out(out_score, handle(lm, "lm")?.0.sentence_log10(&words), "out")
    })
}

/// # Safety
/// `lm` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mien_lm_free(lm: *mut MienLm) {
    free(lm)
}

// ---------------------------------------------------------------------------
// Tokenizer

/// # Safety
/// `path` must be a valid C string and out-pointers valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mien_bpe_load(path: *const c_char, out_bpe: *mut *mut MienBpe) -> MienStatus {
    guard(|| {
        let bpe = BpeModel::load(Path::new(text(path, "path")?))?;
        out(out_bpe, boxed(MienBpe(bpe)), "out")
    })
}

/// # Safety
/// `bpe` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mien_bpe_free(bpe: *mut MienBpe) {
    free(bpe)
}

/// Encode text into `ids[0..cap]`. `len` always receives the full length.
///
/// # Safety
/// `ids` must hold `cap` elements; other pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mien_bpe_encode(
    bpe: *const MienBpe,
    input: *const c_char,
    ids: *mut u32,
    cap: usize,
    len: *mut usize,
) -> MienStatus {
    guard(|| out_ids(&bpe_encode(text(input, "text")?, &handle(bpe, "bpe")?.0), ids, cap, len))
}

/// # Safety
/// `ids` must hold `len` elements; other pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mien_bpe_decode(
    bpe: *const MienBpe,
    ids: *const u32,
    len: usize,
    out_text: *mut *mut c_char,
) -> MienStatus {
    guard(|| {
        let s = bpe_decode(slice(ids, len, "ids")?, &handle(bpe, "bpe")?.0)?;
        out_string(out_text, s, "out")
    })
}

// ---------------------------------------------------------------------------
// CTC

/// Negative log-likelihood of `labels`; `INFINITY` when infeasible.
///
/// # Safety
/// `logprobs` must hold `frames * vocab` values and `labels` `n_labels`.
#[no_mangle]
pub unsafe extern "C" fn mien_ctc_loss(
    logprobs: *const f64,
    frames: usize,
    vocab: usize,
    labels: *const u32,
    n_labels: usize,
    out_loss: *mut f64,
) -> MienStatus {
    guard(|| {
        let em = emissions(logprobs, frames, vocab)?;
        out(out_loss, ctc::ctc_loss(&em, slice(labels, n_labels, "labels")?)?, "out")
    })
}

/// Loss and its gradient with respect to the pre-softmax logits, written to
/// `grad[0..frames*vocab]`.
///
/// # Safety
/// `grad` must hold `frames * vocab` values; other buffers as for
/// [`mien_ctc_loss`].
#[no_mangle]
pub unsafe extern "C" fn mien_ctc_loss_grad(
    logprobs: *const f64,
    frames: usize,
    vocab: usize,
    labels: *const u32,
    n_labels: usize,
    out_loss: *mut f64,
    grad: *mut f64,
) -> MienStatus {
    guard(|| {
        let em = emissions(logprobs, frames, vocab)?;
        let (loss, g) = ctc::ctc_loss_grad(&em, slice(labels, n_labels, "labels")?)?;
        if grad.is_null() || out_loss.is_null() {
            return Err(Failure(MienStatus::NullPointer, "output pointer is null".into()));
        }
        ptr::copy_nonoverlapping(g.as_ptr(), grad, g.len());
        out(out_loss, loss, "out")
    })
}

/// Best-path decoding: argmax per frame, repeats merged, blanks removed.
///
/// # Safety
/// `ids` must hold `cap` elements; other buffers as for [`mien_ctc_loss`].
#[no_mangle]
pub unsafe extern "C" fn mien_greedy_decode(
    logprobs: *const f64,
    frames: usize,
    vocab: usize,
    ids: *mut u32,
    cap: usize,
    len: *mut usize,
) -> MienStatus {
    guard(|| out_ids(&ctc::greedy_decode(&emissions(logprobs, frames, vocab)?), ids, cap, len))
}

// ---------------------------------------------------------------------------
// Decoding

#[no_mangle]
pub extern "C" fn mien_decode_params_default() -> MienDecodeParams {
    let d = DecodeConfig::default();
    MienDecodeParams { beam_size: d.beam_size, lm_weight: d.lm_weight, word_insertion_penalty: d.word_insertion_penalty }
}

/// Lexicon-constrained phoneme decoder; the emission columns follow the
/// vocabulary file.
///
/// # Safety
/// Paths must be valid C strings and out-pointers valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mien_phoneme_decoder_new(
    lexicon_path: *const c_char,
    vocab_path: *const c_char,
    lm_path: *const c_char,
    out_dec: *mut *mut MienDecoder,
) -> MienStatus {
    guard(|| {
        let lexicon = load_lexicon(Path::new(text(lexicon_path, "lexicon path")?))?;
        let vocab = PhonemeVocab::load(Path::new(text(vocab_path, "vocab path")?))?;
        let lm = arpa_read(Path::new(text(lm_path, "lm path")?))?;
        let tree = build_prefix_tree(&lexicon, &vocab)?;
        out(out_dec, boxed(MienDecoder(DecoderInner::Phoneme { tree, lm })), "out")
    })
}

/// Subword decoder; the emission columns follow the BPE vocabulary.
///
/// # Safety
/// Paths must be valid C strings and out-pointers valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mien_subword_decoder_new(
    bpe_path: *const c_char,
    lm_path: *const c_char,
    out_dec: *mut *mut MienDecoder,
) -> MienStatus {
    guard(|| {
        let bpe = BpeModel::load(Path::new(text(bpe_path, "bpe path")?))?;
        let lm = arpa_read(Path::new(text(lm_path, "lm path")?))?;
        out(out_dec, boxed(MienDecoder(DecoderInner::Subword { bpe, lm })), "out")
    })
}

/// # Safety
/// `dec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mien_decoder_free(dec: *mut MienDecoder) {
    free(dec)
}

/// Best hypothesis as space-separated words, plus its total score.
///
/// # Safety
/// `logprobs` must hold `frames * vocab` values; `out_text` receives a string
/// to free with [`mien_string_free`]; `out_score` may be null.
#[no_mangle]
pub unsafe extern "C" fn mien_decode(
    dec: *const MienDecoder,
    logprobs: *const f64,
    frames: usize,
    vocab: usize,
    params: MienDecodeParams,
    out_text: *mut *mut c_char,
    out_score: *mut f64,
) -> MienStatus {
    guard(|| {
        let em = emissions(logprobs, frames, vocab)?;
        let (decoder, mode) = match &handle(dec, "decoder")?.0 {
            DecoderInner::Phoneme { tree, lm } => (Decoder::Phoneme { tree, lm }, DecodeMode::Phoneme),
            DecoderInner::Subword { bpe, lm } => (Decoder::Subword { bpe, lm }, DecodeMode::Subword),
        };
        let cfg = DecodeConfig {
            beam_size: params.beam_size,
            lm_weight: params.lm_weight,
            word_insertion_penalty: params.word_insertion_penalty,
            nbest: 1,
            mode,
        };
        let hyps = decoder.decode(&em, &cfg)?;
        let best = hyps.first().ok_or_else(|| invalid("no hypothesis survived the search"))?;
        if !out_score.is_null() {
            out_score.write(best.score);
        }
        out_string(out_text, best.text(), "out")
    })
}

// ---------------------------------------------------------------------------
// Scoring

/// Edit counts between whitespace-tokenized reference and hypothesis.
///
/// # Safety
/// Strings must be valid C strings and out-pointers valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mien_error_rate(
    reference: *const c_char,
    hypothesis: *const c_char,
    out_score: *mut MienScore,
) -> MienStatus {
    guard(|| {
        let r: Vec<&str> = text(reference, "reference")?.split_whitespace().collect();
        let h: Vec<&str> = text(hypothesis, "hypothesis")?.split_whitespace().collect();
        let rep = error_rate(&r, &h);
        let score = MienScore {
            substitutions: rep.substitutions,
            deletions: rep.deletions,
            insertions: rep.insertions,
            reference_length: rep.reference_length,
            rate: rep.rate(),
        };
        out(out_score, score, "out")
    })
}
