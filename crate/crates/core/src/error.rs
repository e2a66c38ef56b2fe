use std::path::PathBuf;

use crate::data::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("sample `{id}` is invalid: {}", join_violations(.violations))]
    Validation { id: String, violations: Vec<Violation> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),

    #[error("refusing to overwrite existing file {0} (pass --force)")]
    WouldOverwrite(PathBuf),

    #[error("timeline table is empty")]
    EmptyTable,

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("token position {0} belongs to the question, not a subtitle")]
    QuestionToken(usize),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfVocab { id: u32, vocab_size: usize },

    #[error("sample has no subtitle tokens; no textual target")]
    NoTextTarget,

    #[error("target position {0} is masked")]
    MaskedTarget(usize),

    #[error("all positions are masked")]
    FullyMasked,

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },

    #[error("checkpoint manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("report was produced without mutual knowledge transfer; no alpha/beta trace")]
    MktDisabled,

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 data/validation, 3 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnknownKey(_) | Error::WouldOverwrite(_) | Error::MktDisabled => 1,
            Error::Divergence { .. } => 3,
            _ => 2,
        }
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}
