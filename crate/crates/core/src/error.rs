use std::path::PathBuf;

/// Errors produced anywhere in the clustering pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("matrix must have at least one row and one column (got {rows}x{cols})")]
    EmptyMatrix { rows: usize, cols: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("row {row} has near-zero norm and cannot be normalized")]
    ZeroNormRow { row: usize },

    #[error("need at least {needed} rows, got {actual}")]
    InsufficientRows { needed: usize, actual: usize },

    #[error("k-means needs at least k={k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },

    #[error("invalid cluster count k={0}; need k >= 2")]
    InvalidClusterCount(usize),

    #[error("could not re-seed empty clusters after {attempts} attempts")]
    EmptyClusterUnrecoverable { attempts: usize },

    #[error("degrees of freedom alpha must be positive, got {0}")]
    NonPositiveAlpha(f64),

    #[error("soft frequency of cluster {cluster} is degenerate ({value:e})")]
    DegenerateFrequency { cluster: usize, value: f64 },

    #[error("cluster {cluster} has no mass in this batch")]
    EmptyPrototype { cluster: usize },

    #[error("temperature must be positive, got {0}")]
    NonPositiveTau(f64),

    #[error("batch of {0} samples is too small for a contrastive loss")]
    BatchTooSmall(usize),

    #[error("need at least 2 prototypes, got {0}")]
    TooFewPrototypes(usize),

    #[error("cached activations do not match the network or upstream gradient")]
    StaleCache,

    #[error("EMA momentum must lie in [0, 1), got {0}")]
    InvalidMomentum(f64),

    #[error("label vectors differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },

    #[error("need at least {needed} samples, got {actual}")]
    TooFewSamples { needed: usize, actual: usize },

    #[error("could not place {k} centers at distance >= {min_dist} after {attempts} attempts")]
    CenterPlacementFailed { k: usize, min_dist: f64, attempts: usize },

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("{path}:{line}: expected {expected} fields, found {found}")]
    RaggedRows { path: PathBuf, line: usize, expected: usize, found: usize },

    #[error("{path}:{line}: non-finite value")]
    NonFiniteValue { path: PathBuf, line: usize },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
