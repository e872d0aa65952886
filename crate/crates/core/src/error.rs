use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A pivot fell below the relative threshold. `pivot_ratio` is the
    /// smallest |pivot| divided by the matrix scale.
    #[error("singular system: {context} (relative pivot {pivot_ratio:.3e})")]
    Singular { context: String, pivot_ratio: f64 },

    #[error("no convergence after {iterations} iterations (score norm {score_norm:.3e})")]
    NonConvergence { iterations: usize, score_norm: f64 },

    #[error("model specification: {0}")]
    Spec(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("io error: {0}")]
    Io(String),

    #[error("calibration failed: best adjusted R² {best_adj_r2:.5} below target {target}")]
    Calibration { best_adj_r2: f64, target: f64 },

    #[error("study failed: {failed} of {reps} replications failed")]
    Study { failed: usize, reps: usize },
}

impl Error {
    /// True for failures that come from the numbers (singular designs,
    /// non-convergent fits) rather than from malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. }
                | Error::NonConvergence { .. }
                | Error::Calibration { .. }
                | Error::Study { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
