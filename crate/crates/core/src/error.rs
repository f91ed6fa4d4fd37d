use std::path::PathBuf;

/// Crate-wide error type. Variant names are part of the public contract:
/// the CLI prints them verbatim and tests match on them.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("BandCountMismatch: expected {expected} bands, found {found} in {path:?}")]
    BandCountMismatch {
        expected: usize,
        found: usize,
        path: PathBuf,
    },
    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),
    #[error("NonFiniteData: {0}")]
    NonFiniteData(String),
    #[error("EmptyDataset: {0}")]
    EmptyDataset(String),
    #[error("StatsMissing: {0}")]
    StatsMissing(String),
    #[error("NoForeground: no positive pixels in the mask set")]
    NoForeground,
    #[error("TooFewTiles: need at least {k} tiles for {k} folds, got {n}")]
    TooFewTiles { n: usize, k: usize },
    #[error("WindowGridMismatch: window {window} does not tile the {h}x{w} token grid")]
    WindowGridMismatch { window: usize, h: usize, w: usize },
    #[error("ShapeNotDivisible: input {h}x{w} not divisible by {divisor}")]
    ShapeNotDivisible { h: usize, w: usize, divisor: usize },
    #[error("ConfigMismatch: {0}")]
    ConfigMismatch(String),
    #[error("ShapeConflict: parameter {name} has shape {found:?}, checkpoint has {expected:?}")]
    ShapeConflict {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("BadReduction: {channels} channels not divisible by reduction {reduction}")]
    BadReduction { channels: usize, reduction: usize },
    #[error("EmptyCounts: no pixels accumulated")]
    EmptyCounts,
    #[error("NonBinaryInput: mask contains values outside {{0,1}}")]
    NonBinaryInput,
    #[error("BadThreshold: tau must lie in (0,1), got {0}")]
    BadThreshold(f64),
    #[error("CheckpointLoadError: {0}")]
    CheckpointLoadError(String),
    #[error("FormatError: {0}")]
    Format(String),
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
    #[error("Tensor: {0}")]
    Candle(#[from] candle_core::Error),
    #[error("Tiff: {0}")]
    Tiff(#[from] tiff::TiffError),
}

impl Error {
    /// Stable short name of the variant, used by the CLI diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            Error::BandCountMismatch { .. } => "BandCountMismatch",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::NonFiniteData(_) => "NonFiniteData",
            Error::EmptyDataset(_) => "EmptyDataset",
            Error::StatsMissing(_) => "StatsMissing",
            Error::NoForeground => "NoForeground",
            Error::TooFewTiles { .. } => "TooFewTiles",
            Error::WindowGridMismatch { .. } => "WindowGridMismatch",
            Error::ShapeNotDivisible { .. } => "ShapeNotDivisible",
            Error::ConfigMismatch(_) => "ConfigMismatch",
            Error::ShapeConflict { .. } => "ShapeConflict",
            Error::BadReduction { .. } => "BadReduction",
            Error::EmptyCounts => "EmptyCounts",
            Error::NonBinaryInput => "NonBinaryInput",
            Error::BadThreshold(_) => "BadThreshold",
            Error::CheckpointLoadError(_) => "CheckpointLoadError",
            Error::Format(_) => "FormatError",
            Error::Io(_) => "Io",
            Error::Candle(_) => "Tensor",
            Error::Tiff(_) => "Tiff",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
