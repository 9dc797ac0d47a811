use std::path::PathBuf;

/// Errors produced by the estimation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("Rényi order must be positive and different from 1, got {0}")]
    InvalidOrder(f64),

    #[error("corpus `{0}` has no tokens")]
    EmptyCorpus(String),

    #[error("document has no token with an embedding")]
    UnembeddableDocument,

    #[error("corpus `{0}` has no embeddable document")]
    NoEmbeddableDocuments(String),

    #[error("insufficient pool for `{domain}`: {have} documents, need {need}")]
    InsufficientPool {
        domain: String,
        have: usize,
        need: usize,
    },

    #[error("representation hash mismatch ({what}): {left} vs {right}")]
    HashMismatch {
        what: &'static str,
        left: String,
        right: String,
    },

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("feature schema mismatch: expected {expected} features, got {got}")]
    SchemaMismatch { expected: usize, got: usize },

    #[error("missing representation for domain(s): {0}")]
    MissingRepresentation(String),

    #[error("unknown target `{0}`")]
    UnknownTarget(String),

    #[error("features and performances do not join; missing pairs: {0}")]
    JoinGap(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("k={k} out of range 1..={n}")]
    KOutOfRange { k: usize, n: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
