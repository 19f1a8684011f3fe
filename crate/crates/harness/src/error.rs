use thiserror::Error;

/// Failures while reading a dataset. Each kind maps to its own variant so
/// callers can tell a malformed file from bad cell contents.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot parse {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("missing value in column {column:?} at data row {row}")]
    Missing { column: String, row: usize },
    #[error("non-numeric value {value:?} in column {column:?} at data row {row}")]
    NonNumeric { column: String, row: usize, value: String },
    #[error("column {0:?} not found in header")]
    UnknownColumn(String),
    #[error("dataset has {0} rows; at least 10 are required")]
    TooFewRows(usize),
    #[error("no usable feature columns")]
    NoFeatures,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] nystrom_krr::Error),
}

impl HarnessError {
    /// 2 for configuration and input problems, 3 for numerical failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Core(e) if e.is_numerical() => 3,
            HarnessError::Io(_) => 1,
            _ => 2,
        }
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Io(std::io::Error::other(e))
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
