use thiserror::Error;

/// Failure modes of a logistic regression fit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("design matrix is rank deficient after intercept augmentation")]
    RankDeficient,
    #[error("complete or quasi-complete separation detected after {iterations} iterations")]
    Separation { iterations: usize },
    #[error("need at least 2 records in each class, got {positives} positive and {negatives} negative")]
    TooFewRecords { positives: usize, negatives: usize },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation error at data row {row}: {message}")]
    Validation { row: usize, message: String },
    #[error("input error: {0}")]
    Input(String),
    #[error("propensity fit failed: {0}")]
    Fit(#[from] FitError),
    #[error("degenerate subset: {treated} treated and {control} control records")]
    DegenerateSubset { treated: usize, control: usize },
    #[error("degenerate partitions: {0}")]
    DegeneratePartitions(String),
    #[error("planning error: {0}")]
    Planning(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_) | Error::Config(_) | Error::Planning(_) => 2,
            Error::DegeneratePartitions(_) => 4,
            Error::Schema(_)
            | Error::Validation { .. }
            | Error::Input(_)
            | Error::Fit(_)
            | Error::DegenerateSubset { .. }
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => 3,
        }
    }

    /// Short machine-readable tag for error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parameter(_) => "parameter",
            Error::Config(_) => "config",
            Error::Schema(_) => "schema",
            Error::Validation { .. } => "validation",
            Error::Input(_) => "input",
            Error::Fit(_) => "fit",
            Error::DegenerateSubset { .. } => "degenerate_subset",
            Error::DegeneratePartitions(_) => "degenerate_partitions",
            Error::Planning(_) => "planning",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
