//! Deterministic building blocks for low-resource Iu Mien speech
//! recognition: orthography parsing, table-driven G2P, BPE tokenization,
//! back-off n-gram language models, CTC alignment math, lexicon- and
//! LM-constrained CTC beam search, output-layer transfer initialization and
//! WER/PER scoring with a cross-validation splitter.
//!
//! Everything works on precomputed acoustic emission matrices, so the
//! recognition and scoring path runs without any neural network.

pub mod ctc;
pub mod decoder;
pub mod emission;
mod error;
pub mod eval;
pub mod lexicon;
pub mod lm;
pub mod orthography;
pub mod pipeline;
pub mod synthetic;
mod text;
pub mod tokenizer;
pub mod transfer;

pub use error::{Error, Result};
pub use text::split_utterance_line;

/// Token text of the CTC blank, which always has id 0.
pub const BLANK_TOKEN: &str = "<blk>";

/// Id of the CTC blank in every vocabulary and emission matrix.
pub const BLANK_ID: u32 = 0;
