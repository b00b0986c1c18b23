use nalgebra::DVector;
use thiserror::Error;

pub type Result<T, E = ScqError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ScqError {
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// Some `lambda_j + n * nu` is not strictly positive.
    #[error("singular regularization: lambda_min + n*nu = {denominator:e} <= 0 (nu = {nu:e})")]
    SingularRegularization { nu: f64, denominator: f64 },

    #[error("multiplier nu = {nu:e} is outside the dual bracket (lower bound {lower:e})")]
    OutOfBracket { nu: f64, lower: f64 },

    /// The column target vanished, so no unit-norm stationary point exists.
    #[error("degenerate column {column}: effective target is zero")]
    DegenerateColumn { column: usize },

    /// The (nu, phi) alternation hit its iteration cap. Carries the last iterate.
    #[error("column {column} did not reach unit norm after {iterations} inner iterations (|v'v - 1| = {norm_error:e})")]
    ConvergenceFailure {
        column: usize,
        iterations: usize,
        norm_error: f64,
        last: DVector<f64>,
        nu: f64,
    },

    #[error("degenerate spectrum: sum of the top eigenvalues is {0:e}")]
    DegenerateSpectrum(f64),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("format error at {location}: {message}")]
    Format { location: String, message: String },

    #[error("unsupported model format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("corrupt model: {0}")]
    CorruptModel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ScqError {
    pub(crate) fn format_at_byte(offset: usize, message: impl Into<String>) -> Self {
        ScqError::Format {
            location: format!("byte {offset}"),
            message: message.into(),
        }
    }

    pub(crate) fn format_at_line(line: usize, message: impl Into<String>) -> Self {
        ScqError::Format {
            location: format!("line {line}"),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScqError::InvalidConfig(_) => 1,
            ScqError::NumericalFailure(_)
            | ScqError::SingularRegularization { .. }
            | ScqError::OutOfBracket { .. }
            | ScqError::DegenerateColumn { .. }
            | ScqError::ConvergenceFailure { .. }
            | ScqError::DegenerateSpectrum(_) => 3,
            _ => 2,
        }
    }
}
