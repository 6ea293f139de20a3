use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("label column `{0}` not found in header")]
    MissingLabelColumn(String),
    #[error("benign class `{0}` does not occur in the data")]
    MissingBenignClass(String),
    #[error("no usable rows")]
    EmptyDataset,
    #[error("column `{column}` row {row}: cannot parse `{value}` as a number")]
    ParseFeature {
        column: String,
        row: usize,
        value: String,
    },
    #[error("class {class} has {have} samples, {need} required")]
    InsufficientSamples {
        class: String,
        have: usize,
        need: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("zero-norm embedding under cosine distance (row {0})")]
    ZeroNorm(usize),
    #[error("no valid triplets or pairs in batch")]
    NoValidTriplets,
    #[error("config error: {0}")]
    Config(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numeric blow-up during training.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::ZeroNorm(_) | Error::NoValidTriplets
        )
    }
}
