use thiserror::Error;

/// Error type shared by every module in this crate.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("invalid timestep {t}: valid range is 1..={max}")]
    InvalidTimestep { t: usize, max: usize },

    #[error("font '{font_id}' has no glyph for '{ch}'")]
    MissingGlyph { font_id: String, ch: char },

    #[error("rendering '{ch}' from font '{font_id}' produced an empty raster")]
    EmptyRaster { font_id: String, ch: char },

    #[error("corpus is empty{0}")]
    EmptyCorpus(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("{op} requires a square image, got {h}x{w}")]
    NonSquare { op: &'static str, h: usize, w: usize },

    #[error("numerical divergence: non-finite latent at step {step}")]
    NumericalDivergence { step: usize },

    #[error("non-finite loss at iteration {0}")]
    NonFiniteLoss(u64),

    #[error("corpus is missing class '{0}'")]
    MissingClass(String),

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    #[error("checkpoint format error: {0}")]
    BadCheckpoint(String),

    #[error("container format error: {0}")]
    BadContainer(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, CoreError>;
