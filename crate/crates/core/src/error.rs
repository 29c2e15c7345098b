use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// Messages are phrased at the physics level where possible, so that a
/// failed CLI run tells the user what went wrong with the model rather than
/// which matrix routine complained.
#[derive(Debug, Error)]
pub enum Error {
    #[error("structural error: {0}")]
    Structural(String),

    #[error("unknown region `{0}`")]
    UnknownRegion(String),

    #[error("divergent kernel: {0}")]
    DivergentKernel(String),

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error(
        "undamped resonance: the frequency-domain Green's function is singular at omega = {omega}"
    )]
    SingularAtFrequency { omega: f64 },

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("inconclusive decay window: {0}")]
    InconclusiveWindow(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("not stationary: {0}")]
    NotStationary(String),

    #[error("requested time {t_max} exceeds the finite-bath validity window {window} (half the recurrence time)")]
    RecurrenceWindowExceeded { t_max: f64, window: f64 },

    #[error("heat-current window too noisy: relative spread {spread:.3e} exceeds {limit:.3e}")]
    WindowTooNoisy { spread: f64, limit: f64 },

    #[error("zero temperature: {0}")]
    ZeroTemperature(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
