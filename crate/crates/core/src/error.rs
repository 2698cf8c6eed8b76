use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("variable `{variable}` has zero variance over the training split")]
    ZeroVariance { variable: String },

    #[error("correlation undefined: zero anomaly energy in {0}")]
    UndefinedCorrelation(&'static str),

    #[error("task difficulty is infinite: every token of both frames is masked")]
    InfiniteDifficulty,

    #[error("linear algebra failure: {0}")]
    LinAlg(String),

    #[error("non-finite gradient at step {step} for parameter `{param}`")]
    NonFiniteGradient { step: usize, param: String },

    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
