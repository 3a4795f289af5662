use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A text file did not follow its documented format.
    #[error("{origin}:{line}: {message}")]
    Format {
        origin: String,
        line: usize,
        message: String,
    },

    #[error("invalid inventory: {0}")]
    Inventory(String),

    #[error("cannot parse syllable {syllable:?}: no valid decomposition of {suffix:?}")]
    Syllable { syllable: String, suffix: String },

    #[error("cannot parse word {word:?}: no syllable starts at byte offset {offset}")]
    Word { word: String, offset: usize },

    #[error("no table entry for {word:?} (syllable {syllable:?}) at offset {offset}")]
    Untranslatable {
        word: String,
        syllable: String,
        offset: usize,
    },

    #[error("token {0:?} is not in the vocabulary")]
    UnknownToken(String),

    #[error("vocabulary mismatch: emissions have {emissions} columns, model expects {expected}")]
    VocabMismatch { emissions: usize, expected: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid emission matrix: {0}")]
    Emission(String),

    #[error("invalid config: {0}")]
    Config(String),

    /// A pipeline stage failed; outputs of earlier stages are kept on disk.
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(origin: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            origin: origin.into(),
            line,
            message: message.into(),
        }
    }
}

pub(crate) fn read_to_string(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_string(path: &std::path::Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
