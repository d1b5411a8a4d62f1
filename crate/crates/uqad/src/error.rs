use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: not an IDX file: {detail}")]
    IdxFormat { path: PathBuf, detail: String },

    #[error("inconsistent data: {0}")]
    Consistency(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value in {name}")]
    Numeric { name: String },

    #[error("class partition error: {0}")]
    Partition(String),

    #[error("training diverged (non-finite loss) at step {step}")]
    Training { step: usize },

    #[error("model variant error: {0}")]
    Variant(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("not enough samples: {0}")]
    SampleSize(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("results file error: {0}")]
    Results(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
