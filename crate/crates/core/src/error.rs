use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("contracted axis pair ({a_axis}, {b_axis}) has sizes {a_size} != {b_size}")]
    AxisPair {
        a_axis: usize,
        b_axis: usize,
        a_size: usize,
        b_size: usize,
    },

    #[error("invalid axis list: {0}")]
    Axes(String),

    #[error("{0:?} is not a permutation of 0..{1}")]
    Permutation(Vec<usize>, usize),

    #[error("{len} is not a power of {base}")]
    NotPowerOf { len: usize, base: usize },

    #[error("invalid layer spec: {0}")]
    Spec(String),

    #[error("dense materialization needs {needed} entries, cap is {cap}; use the oracle at smaller n")]
    CapExceeded { needed: usize, cap: usize },

    #[error("invalid contraction order: {0}")]
    Order(String),

    #[error("backward needs a scalar root, got dims {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("batch of {0} is too small for train-mode batch normalization")]
    BatchTooSmall(usize),

    #[error("invalid model config: {0}")]
    Config(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("{path}: expected {expected} bytes, found {actual}")]
    FileLength {
        path: String,
        expected: usize,
        actual: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
