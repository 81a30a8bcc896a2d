use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm {norm:e} is below the normalization threshold")]
    ZeroVector { norm: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("vector is not unit-norm (norm = {norm})")]
    NotNormalized { norm: f64 },

    #[error("prompt kind {kind} requires a {index} index")]
    MissingIndex {
        kind: &'static str,
        index: &'static str,
    },

    #[error("prompt kind {kind} does not take a {index} index")]
    UnexpectedIndex {
        kind: &'static str,
        index: &'static str,
    },

    #[error("unknown class: {0}")]
    UnknownClass(String),

    #[error("invalid vocabulary: {0}")]
    BadVocabulary(String),

    #[error("prompt contains the style placeholder but no style vector was supplied")]
    MissingStyleVector,

    #[error("prompt has no style placeholder but a style vector was supplied")]
    UnexpectedStyleVector,

    #[error("prompt must contain the style placeholder exactly once")]
    MissingStyleSlot,

    #[error("token sequence of length {len} exceeds the maximum of {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("token id {0} is outside the vocabulary")]
    UnknownToken(u32),

    #[error("bad encoder architecture: {0}")]
    BadArchitecture(String),

    #[error("bad initialization distribution: {0}")]
    BadDistribution(String),

    #[error("non-finite loss at style {style}, iteration {iteration}")]
    NonFiniteLoss { style: usize, iteration: usize },

    #[error("non-finite classifier loss in epoch {epoch}")]
    NonFiniteTraining { epoch: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("training set is empty")]
    EmptyDataset,

    #[error("invalid config field `{field}`: {reason}")]
    ConfigInvalid { field: String, reason: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::ConfigInvalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigInvalid { .. }
            | Error::UnknownClass(_)
            | Error::BadVocabulary(_)
            | Error::BadArchitecture(_)
            | Error::BadDistribution(_) => 2,
            Error::Io(_) | Error::Format(_) => 4,
            _ => 3,
        }
    }
}
