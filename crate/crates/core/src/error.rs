use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("sampling frequency {fs} Hz aliases a {fc} Hz carrier (need fs >= 4 fc)")]
    Aliasing { fs: f64, fc: f64 },

    #[error("time window too small: {0}")]
    WindowTooSmall(String),

    #[error("profile has no half-maximum crossing on the {0} side of the peak")]
    OpenProfile(&'static str),

    #[error("degenerate scene: {0}")]
    DegenerateScene(String),

    #[error("noise sigma is zero, SNR targeting is undefined")]
    DegenerateNoise,

    #[error("signal-free region is invalid: {0}")]
    InvalidRegion(String),

    #[error("solver diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("inconsistent inputs: {0}")]
    Mismatch(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used to map errors onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Consistency,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Mismatch(_) => ErrorClass::Consistency,
            Error::Divergence { .. } => ErrorClass::Numerical,
            _ => ErrorClass::Input,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
