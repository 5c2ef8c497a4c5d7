//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate feature group name `{0}`")]
    DuplicateGroupName(String),

    #[error("feature group `{0}` has zero cardinality")]
    ZeroCardinality(String),

    #[error("schema needs at least one `{0}` group")]
    MissingCategory(&'static str),

    #[error("group `{group}`: id {id} out of range (cardinality {cardinality})")]
    IdOutOfRange {
        group: String,
        id: u32,
        cardinality: usize,
    },

    #[error("one-hot group `{group}` got {got} ids, expected exactly 1")]
    OneHotArity { group: String, got: usize },

    #[error("instance has {got} id lists, schema has {expected} groups")]
    GroupCountMismatch { got: usize, expected: usize },

    #[error("vector width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },

    #[error("non-finite gradient in tensor `{tensor}`")]
    NonFiniteGradient { tensor: String },

    #[error("group `{group}`: batch id {id} has no training occurrence count")]
    UnknownFeatureOccurrence { group: String, id: u32 },

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("RelaImpr undefined against the random baseline AUC of 0.5")]
    DivisionByRandomBaseline,

    #[error("empty mini-batch in training mode")]
    EmptyBatch,

    #[error("checkpoint schema hash {checkpoint} does not match data schema hash {data}")]
    SchemaMismatch { checkpoint: String, data: String },

    #[error("unknown feature group `{0}`")]
    UnknownGroup(String),

    #[error("checkpoint model kind `{0}` has no attention weights")]
    NoAttention(String),

    #[error("config key `{key}`: {problem}")]
    Config { key: String, problem: String },

    #[error("{path}:{line}: {problem}")]
    Malformed {
        path: String,
        line: usize,
        problem: String,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    InvalidInput(String),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
