use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("zero grid dimension: {height}x{width}")]
    ZeroGridDim { height: usize, width: usize },

    #[error("shape mismatch: expected {expected}, got {actual} ({context})")]
    ShapeMismatch {
        expected: String,
        actual: String,
        context: &'static str,
    },

    #[error("sampling rate {0} outside (0, 1]")]
    InvalidRate(f64),

    #[error("index {index} out of range for grid of {count} positions")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("mask indices must be sorted, unique, and in range ({0})")]
    InvalidMask(&'static str),

    #[error("reference vector has zero norm")]
    ZeroNorm,

    #[error("negative entry at index {0} where nonnegative values are required")]
    NegativeEntry(usize),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("patch {patch_h}x{patch_w} does not fit grid {height}x{width}")]
    PatchTooLarge {
        patch_h: usize,
        patch_w: usize,
        height: usize,
        width: usize,
    },

    #[error("no observed pixels available ({0})")]
    NoObservations(&'static str),

    #[error("orientation library is empty")]
    EmptyLibrary,

    #[error("orientation signatures are not distinguishable: {0}")]
    DegenerateLibrary(String),
}

pub type Result<T> = std::result::Result<T, Error>;
