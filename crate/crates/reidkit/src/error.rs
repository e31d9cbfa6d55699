use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// An input image has a zero-sized dimension.
    #[error("image has an empty dimension")]
    EmptyImage,

    /// A component band is too small for the requested cell/stripe grid.
    #[error("component band of {rows} rows cannot hold a {min_rows}-row cell")]
    ComponentTooSmall { rows: usize, min_rows: usize },

    /// Two operands that must share a dimension do not.
    #[error("dimension mismatch: {context} ({left} vs {right})")]
    DimensionMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    /// Chi-squared kernels require nonnegative inputs.
    #[error("negative input value {value} at descriptor {row}, coordinate {col}")]
    NegativeInput { row: usize, col: usize, value: f64 },

    /// All points coincide; no bandwidth can be estimated.
    #[error("degenerate descriptor set: median pairwise distance is zero")]
    DegenerateSet,

    /// Unregularized solve on a rank-deficient Gram matrix.
    #[error("singular system: kappa = 0 with a rank-deficient Gram matrix")]
    SingularSystem,

    /// An eigen- or Cholesky solve failed or produced non-finite values.
    #[error("numerical failure: {0}")]
    NonFinite(&'static str),

    /// Fewer training identities than the operation needs.
    #[error("need at least {required} training identities, got {actual}")]
    TooFewIdentities { required: usize, actual: usize },

    /// Iterative filtering removed every kernel-channel.
    #[error("iterative filtering dropped all kernel-channels; training data is degenerate")]
    AllChannelsDropped,

    /// A split protocol ran out of identities.
    #[error("insufficient identities for protocol: {0}")]
    InsufficientIdentities(String),

    /// A probe identity is absent from the gallery.
    #[error("probe {probe} has no gallery match for identity {identity:?}")]
    MissingTruth { probe: usize, identity: String },

    /// Curves or matrices of unequal shape were combined.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// The dataset directory does not follow the documented layout.
    #[error("dataset layout error at {path}: {reason}")]
    Layout { path: PathBuf, reason: String },

    /// An image or cache file failed to decode.
    #[error("failed to decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    /// Invalid configuration value or file.
    #[error("config error: {0}")]
    Config(String),

    /// A stored artifact was produced under a different configuration.
    #[error("config hash mismatch for {path}: expected {expected}, found {found}")]
    HashMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit code the CLI maps this error to: 2 for validation problems,
    /// 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Layout { .. } | Error::HashMismatch { .. } => 2,
            _ => 1,
        }
    }
}
