use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{context}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("label {index} out of range for {classes} classes")]
    InvalidLabel { index: usize, classes: usize },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid occlusion: {0}")]
    InvalidOcclusion(String),

    #[error("pixel ({i}, {j}) is not occluded")]
    NotOccluded { i: usize, j: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("incomplete assignment: variable `{0}` has no value")]
    IncompleteAssignment(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("external solver: {0}")]
    Solver(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
