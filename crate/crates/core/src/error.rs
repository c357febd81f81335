use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("malformed binary input: {0}")]
    Format(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("mismatch: {0}")]
    Mismatch(String),
    #[error("mask contains no tumor voxels")]
    EmptyMask,
    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("EM diverged: {0}")]
    Divergence(String),
    #[error("prediction history is empty")]
    EmptyHistory,
    #[error("invalid simulation spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// An I/O error that names the file it concerns.
    pub fn io_at(path: &std::path::Path, err: std::io::Error) -> Self {
        Error::Io(std::io::Error::new(err.kind(), format!("{}: {err}", path.display())))
    }

    /// Stable machine-readable tag, used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "ParseError",
            Error::Validation(_) => "ValidationError",
            Error::Format(_) => "FormatError",
            Error::Dimension(_) => "DimensionError",
            Error::Mismatch(_) => "MismatchError",
            Error::EmptyMask => "EmptyMaskError",
            Error::RankDeficient(_) => "RankDeficientError",
            Error::InsufficientData(_) => "InsufficientDataError",
            Error::Numerical(_) => "NumericalError",
            Error::Divergence(_) => "DivergenceError",
            Error::EmptyHistory => "EmptyHistoryError",
            Error::Spec(_) => "SpecError",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
        }
    }
}
