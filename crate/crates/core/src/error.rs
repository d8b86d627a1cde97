use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DlmError> = std::result::Result<T, E>;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum DlmError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index {index} out of range (valid: {valid})")]
    Index { index: usize, valid: String },

    #[error("range error: {0}")]
    Range(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("unknown sensor id `{0}` (not present in layout)")]
    UnknownSensor(String),

    #[error("normal equations are rank deficient at time index {k}; use a positive regularization")]
    RankDeficient { k: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("query (t = {t} min, x = {x} mi) outside field extent t in [{t_min}, {t_max}], x in [{x_min}, {x_max}]")]
    Extent {
        t: f64,
        x: f64,
        t_min: f64,
        t_max: f64,
        x_min: f64,
        x_max: f64,
    },

    #[error("trajectory left the field at t = {at_minute} min after covering {covered_miles} of {trip_miles} miles")]
    HorizonExceeded {
        covered_miles: f64,
        trip_miles: f64,
        at_minute: f64,
    },

    #[error("model file: {0}")]
    Format(#[from] FormatError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsynthesizable spec: {0}")]
    Unstable(String),
}

/// Failures decoding a persisted model.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {found_major}.{found_minor} (this build reads {supported_major}.x)")]
    Version {
        found_major: u16,
        found_minor: u16,
        supported_major: u16,
    },
    #[error("file truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("checksum mismatch")]
    Checksum,
    #[error("scalar width {found} bytes does not match requested type ({expected} bytes)")]
    ScalarWidth { found: u8, expected: u8 },
    #[error("corrupt payload: {0}")]
    Corrupt(String),
}

impl DlmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DlmError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error family.
    pub fn kind(&self) -> &'static str {
        match self {
            DlmError::Parameter(_) => "parameter",
            DlmError::Dimension(_) => "dimension",
            DlmError::Index { .. } => "index",
            DlmError::Range(_) => "range",
            DlmError::Data(_) => "data",
            DlmError::Parse { .. } => "parse",
            DlmError::UnknownSensor(_) => "unknown_sensor",
            DlmError::RankDeficient { .. } => "rank_deficient",
            DlmError::Numerical(_) => "numerical",
            DlmError::Extent { .. } => "extent",
            DlmError::HorizonExceeded { .. } => "horizon_exceeded",
            DlmError::Format(_) => "format",
            DlmError::Io { .. } => "io",
            DlmError::Unstable(_) => "unstable",
        }
    }
}
