use thiserror::Error;

/// Errors produced by the sketching, detection and estimation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("timestamp {value} out of range [0, {max}]")]
    Range { value: u64, max: u64 },

    #[error("impulse response has zero total mass")]
    DegenerateIrf,

    #[error("pixel contains no photons")]
    EmptyPixel,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("background calibration is empty")]
    Calibration,

    #[error("impulse response transform vanishes at the fundamental frequency")]
    UnidentifiableIrf,

    #[error("invalid data: {0}")]
    Data(String),

    /// Parse failure in a binary or text input, positioned at a byte offset
    /// (binary formats) or line number (text formats).
    #[error("{location}: {message}")]
    Format { location: Location, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Byte(u64),
    Line(u64),
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Location::Byte(b) => write!(f, "byte offset {b}"),
            Location::Line(l) => write!(f, "line {l}"),
        }
    }
}

impl Error {
    pub(crate) fn at_byte(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            location: Location::Byte(offset),
            message: message.into(),
        }
    }

    pub(crate) fn at_line(line: u64, message: impl Into<String>) -> Self {
        Error::Format {
            location: Location::Line(line),
            message: message.into(),
        }
    }

    /// True for errors caused by bad input data rather than bad arguments.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Range { .. }
                | Error::Format { .. }
                | Error::Data(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::EmptyPixel
                | Error::Calibration
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
