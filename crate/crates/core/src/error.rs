use thiserror::Error;

/// Errors produced by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("ground state is degenerate: lambda_2 - lambda_1 = {gap:e}")]
    DegenerateGroundState { gap: f64 },

    #[error("state is not on the unit sphere: norm = {norm:.17e}")]
    NotNormalized { norm: f64 },

    #[error("non-finite control value {0}")]
    NonFiniteControl(f64),

    #[error("alpha_star undefined: {0}")]
    AlphaStar(&'static str),

    #[error(
        "Lyapunov function increased at step {step} (t = {t}): {before:.17e} -> {after:.17e}"
    )]
    LyapunovIncrease {
        step: usize,
        t: f64,
        before: f64,
        after: f64,
    },

    #[error("control samples too short: need {needed}, got {got}")]
    ControlTooShort { needed: usize, got: usize },

    #[error("spec error: {0}")]
    Spec(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for errors caused by bad user input (spec files, overrides, parameters),
    /// as opposed to numerical or runtime failures.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Spec(_) | Error::InvalidParameter(_))
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
