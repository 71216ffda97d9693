use std::path::PathBuf;

use crate::tokenizer::TokenPolicy;

/// Errors produced anywhere in the scoring pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("audio contains no frames")]
    EmptyAudio,
    #[error("waveform of {samples} samples is shorter than one {window}-sample window")]
    TooShort { samples: usize, window: usize },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("truncated file: expected {expected} bytes of payload, found {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("not enough points: {points} frames for {clusters} clusters")]
    NotEnoughPoints { points: usize, clusters: usize },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("empty input")]
    EmptyInput,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("token {token} out of range for vocabulary of {vocab_size} units")]
    TokenOutOfRange { token: u32, vocab_size: usize },
    #[error("training loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("token policy mismatch: model trained with {model}, tokens use {tokens}")]
    PolicyMismatch { model: TokenPolicy, tokens: TokenPolicy },
    #[error("malformed ARPA file: {0}")]
    MalformedArpa(String),
    #[error("component mismatch: {0}")]
    ComponentMismatch(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("missing MOS for utterance {0}")]
    MissingMos(String),
    #[error("unknown utterance id {0}")]
    UnknownUttId(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
