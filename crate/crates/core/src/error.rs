use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid token {0:?}: responses are binary strings over '0'/'1'")]
    InvalidToken(char),
    #[error("response `{0}` is not terminated")]
    Unterminated(String),
    #[error("depth mismatch: expected {expected}, found {found}")]
    DepthMismatch { expected: usize, found: usize },
    #[error("support mismatch: leaf {0} carries data mass but has no model mass")]
    SupportMismatch(String),
    #[error("segment {0} is not in the code alphabet")]
    OutOfModel(String),
    #[error("training diverged at step {0}")]
    TrainingDiverged(usize),
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed input at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("malformed blob: {0}")]
    Blob(String),
    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },
    #[error("run directory: {0}")]
    RunDir(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Stable machine-readable name, used in CLI error JSON and by the C ABI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyDataset => "EmptyDataset",
            Error::InvalidToken(_) => "InvalidToken",
            Error::Unterminated(_) => "Unterminated",
            Error::DepthMismatch { .. } => "DepthMismatch",
            Error::SupportMismatch(_) => "SupportMismatch",
            Error::OutOfModel(_) => "OutOfModel",
            Error::TrainingDiverged(_) => "TrainingDiverged",
            Error::Spec(_) => "SpecError",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Parse { .. } => "ParseError",
            Error::Blob(_) => "BlobError",
            Error::Config { .. } => "ConfigError",
            Error::RunDir(_) => "RunDirError",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
            Error::Csv(_) => "CsvError",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
