use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("disjoint grids")]
    DisjointGrids,

    #[error("extrapolation refused: T = {t} K outside [{min}, {max}] K")]
    Extrapolation { t: f64, min: f64, max: f64 },

    #[error("fit did not converge after {iterations} iterations (cost {cost:.3e}): {reason}")]
    NotConverged {
        iterations: usize,
        cost: f64,
        reason: String,
    },

    #[error("multiphonon correction did not converge after {iterations} iterations (last change {last_change:.3e})")]
    MultiphononNotConverged {
        iterations: usize,
        last_change: f64,
        last_iterate: Vec<f64>,
    },

    #[error("no decay detected in recovery trace")]
    NoDecay,

    #[error("no expansion signal")]
    NoExpansionSignal,

    #[error("window {index} [{lo}, {hi}] cm⁻¹ has zero spectral weight at every temperature; its coefficient is unidentifiable")]
    Unidentifiable { index: usize, lo: f64, hi: f64 },

    #[error("empty selection: {0}")]
    EmptySelection(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for errors raised by an optimizer or iterative scheme that
    /// failed to converge.
    pub fn is_convergence(&self) -> bool {
        matches!(
            self,
            Error::NotConverged { .. } | Error::MultiphononNotConverged { .. }
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Parse { .. })
    }
}
