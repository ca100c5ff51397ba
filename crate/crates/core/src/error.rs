use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// Each variant maps onto one of the CLI exit codes / HTTP statuses via
/// [`FafError::class`].
#[derive(Debug, Error)]
pub enum FafError {
    #[error("dimension mismatch: {what} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("{matrix} is not symmetric positive definite: {reason}")]
    NotSpd { matrix: String, reason: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("rank deficient {what}: smallest pivot {min_pivot:e} vs largest {max_pivot:e}")]
    RankDeficient {
        what: String,
        min_pivot: f64,
        max_pivot: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse error classes shared by the CLI and the HTTP service.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Numerical,
    Precondition,
    NotFound,
    Conflict,
    Io,
}

impl ErrorClass {
    /// CLI exit status.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Numerical => 3,
            ErrorClass::Precondition => 4,
            ErrorClass::Validation | ErrorClass::NotFound | ErrorClass::Conflict | ErrorClass::Io => 2,
        }
    }

    /// HTTP status code.
    pub fn http_status(self) -> u16 {
        match self {
            ErrorClass::Validation => 400,
            ErrorClass::NotFound => 404,
            ErrorClass::Conflict => 409,
            ErrorClass::Precondition | ErrorClass::Numerical => 422,
            ErrorClass::Io => 500,
        }
    }
}

impl FafError {
    pub fn class(&self) -> ErrorClass {
        match self {
            FafError::DimensionMismatch { .. }
            | FafError::NotSpd { .. }
            | FafError::Invalid(_)
            | FafError::Json(_) => ErrorClass::Validation,
            FafError::RankDeficient { .. } | FafError::Numerical(_) => ErrorClass::Numerical,
            FafError::Precondition(_) => ErrorClass::Precondition,
            FafError::NotFound(_) => ErrorClass::NotFound,
            FafError::Conflict(_) => ErrorClass::Conflict,
            FafError::Io(_) => ErrorClass::Io,
        }
    }

    pub(crate) fn dim(what: impl Into<String>, expected: usize, got: usize) -> Self {
        FafError::DimensionMismatch {
            what: what.into(),
            expected,
            got,
        }
    }
}

pub type Result<T, E = FafError> = std::result::Result<T, E>;
