use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid session `{session}`: {reason}")]
    InvalidSession { session: String, reason: String },

    #[error("invalid score for code `{code}`: {value} (expected 0..=6)")]
    InvalidScore { code: &'static str, value: i64 },

    #[error("session `{0}` has no CTRS scores")]
    MissingScores(String),

    #[error("missing labels for sessions: {}", .0.join(", "))]
    MissingLabels(Vec<String>),

    #[error("unknown {scheme} tag `{tag}`")]
    UnknownTag { scheme: &'static str, tag: String },

    #[error("class `{0}` does not occur in the training data")]
    AbsentClass(String),

    #[error("only one class present in the labels; both low and high are required")]
    SingleClass,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("vocabulary is empty after document-frequency pruning (min_df={min_df}, max_df={max_df}); widen the bounds")]
    EmptyVocabulary { min_df: f64, max_df: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("feature blocks come from different corpora")]
    ProvenanceMismatch,

    #[error("untagged utterance at index {0}")]
    Untagged(usize),

    #[error("model `{0}` is required for this feature set")]
    MissingModel(&'static str),

    #[error("template set has no template for {scheme} tag `{tag}`")]
    MissingTemplate { scheme: &'static str, tag: String },

    #[error("numerical failure: {0}")]
    Numerical(String),
}
