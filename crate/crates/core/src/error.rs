use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration; `field` is the path of the offending entry.
    #[error("invalid configuration at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    /// A linear system whose reciprocal condition number fell below tolerance.
    #[error("singular system (reciprocal condition {rcond:.3e}): {context}")]
    Singular { rcond: f64, context: String },

    #[error("infeasible targets (spectral radius {spectral_radius:.6}){}", realization.map(|r| format!(" at realization {r}")).unwrap_or_default())]
    Infeasible {
        spectral_radius: f64,
        realization: Option<usize>,
    },

    #[error("no convergence after {iterations} iterations (last relative change {last_change:.3e}){}", realization.map(|r| format!(" at realization {r}")).unwrap_or_default())]
    NoConvergence {
        iterations: usize,
        last_change: f64,
        last_iterate: Vec<f64>,
        realization: Option<usize>,
    },

    #[error("insufficient samples: {0}")]
    Samples(String),

    #[error("bisection failed: {0}")]
    Bracket(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by the user's input rather than by numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::Json(_))
    }
}
