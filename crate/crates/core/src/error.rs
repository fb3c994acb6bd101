use std::io;

/// Errors raised across the crate.
///
/// The display prefix of each variant is stable and is what callers (and the
/// CLI exit-code mapping) key on.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("corrupt volume: {0}")]
    CorruptVolume(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("write error: {0}")]
    Write(#[source] io::Error),
    #[error("read error: {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("not NIfTI-1: {0}")]
    NotNifti(String),
    #[error("unsupported dtype: {0}")]
    UnsupportedDtype(i16),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("crop out of range: {0}")]
    CropOutOfRange(String),
    #[error("crop too large: {0}")]
    CropTooLarge(String),
    #[error("degenerate channel {0}")]
    DegenerateChannel(usize),

    #[error("subcube larger than volume: {0}")]
    SubcubeTooLarge(String),
    #[error("illegal rotation: {0}")]
    IllegalRotation(String),
    #[error("grid/volume mismatch: {0}")]
    GridMismatch(String),
    #[error("too many layers: {0}")]
    TooManyLayers(String),

    #[error("shape error: {0}")]
    Shape(String),
    #[error("bad mode: {0}")]
    BadMode(String),
    #[error("bad label: {0}")]
    BadLabel(String),
    #[error("degenerate test: {0}")]
    DegenerateTest(String),

    #[error("bad head: {0}")]
    BadHead(String),
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),

    #[error("bad spec: {0}")]
    BadSpec(String),
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("ingest error: {0}")]
    Ingest(String),
    #[error("diverged at step {step}")]
    Diverged { step: usize },
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
}

impl Error {
    /// True for failures of the filesystem rather than of the data or request.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Write(_) | Error::Read { .. } | Error::Ingest(_))
    }

    pub(crate) fn read(path: &std::path::Path, source: io::Error) -> Self {
        Error::Read {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
