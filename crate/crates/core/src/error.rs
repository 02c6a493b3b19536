use thiserror::Error;

/// Errors produced by corpus handling, lexicon construction, training and decoding.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("corpus sides are misaligned: {src} source lines vs {trg} target lines")]
    MisalignedCorpus { src: usize, trg: usize },

    #[error("sentence pair {index} has an empty {side} side")]
    EmptySentence { index: usize, side: &'static str },

    #[error("all sentence pairs were filtered out")]
    AllPairsFiltered,

    #[error("empty source sentence")]
    EmptySource,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("corrupt lexicon: {0}")]
    CorruptLexicon(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error in {path} line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
