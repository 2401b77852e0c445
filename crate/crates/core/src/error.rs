use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty history: meta-policy needs at least one entry")]
    EmptyHistory,

    #[error("history too small: k-NN with k = {k} needs at least {k} entries, have {have}")]
    InsufficientHistory { k: usize, have: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error(
        "neighbor graph is disconnected ({components} components); try increasing kappa"
    )]
    DisconnectedGraph { components: usize },

    #[error("latent dimension {l} too large for {n} samples of dimension {d}")]
    LatentTooLarge { l: usize, n: usize, d: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss in term `{term}` at update {update}")]
    NonFiniteLoss { term: &'static str, update: usize },

    #[error("training diverged at update {update}; last stable update {last_stable}")]
    Diverged { update: usize, last_stable: usize },

    #[error("histogram shapes differ: {0} vs {1} bins")]
    HistogramMismatch(usize, usize),

    #[error("matrix not positive definite")]
    NotPositiveDefinite,

    #[error("model file corrupt: {0}")]
    BadModelFile(String),

    #[error("malformed csv: {0}")]
    MalformedCsv(String),

    #[error("unknown name `{0}` for {1}")]
    UnknownName(String, &'static str),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
