use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    /// A digit needed by the computation lies beyond the tracked precision.
    #[error("precision loss: {0}")]
    PrecisionLoss(String),
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Invalid parameters (field, levels, suite selection, config file).
    #[error("config error: {0}")]
    Config(String),
    /// Grid windows do not fit the requested operation.
    #[error("window error: {0}")]
    Window(String),
    /// The principal-series model cannot resolve the requested data.
    #[error("model error: {0}")]
    Model(String),
    /// An Euler factor was evaluated at a pole.
    #[error("pole: {0}")]
    Pole(String),
    /// Two grid functions live in different coordinate charts.
    #[error("chart mismatch: {0}")]
    ChartMismatch(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
