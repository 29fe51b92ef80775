//! Error type shared by every module, plus the process exit-code mapping
//! used by the CLI.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TtrError>;

#[derive(Debug, Error)]
pub enum TtrError {
    /// Invalid configuration: bad geometry, channel mismatch, out-of-range
    /// threshold, incompatible block size.
    #[error("configuration error: {0}")]
    Config(String),

    /// Operand shapes do not line up (spatial dimensions, vector lengths).
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Per-stream state no longer matches the frames being fed to it,
    /// e.g. geometry drift mid-sequence or a cache built for another grid.
    #[error("stream consistency error: {0}")]
    StreamConsistency(String),

    /// An internal contract was broken (coverage gap, missing cache for a
    /// redundant cell). Indicates a bug in the caller, not bad input data.
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// Malformed file contents.
    #[error("parse error in {path} at byte {offset}: {reason}")]
    Parse {
        path: String,
        offset: usize,
        reason: String,
    },

    /// Pixel depth other than 8-bit (maxval 255).
    #[error("unsupported depth in {path}: maxval {maxval}, only 255 is supported")]
    UnsupportedDepth { path: String, maxval: u32 },

    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: String,
        expected: String,
        found: String,
    },

    #[error("unsupported version in {path}: {version}")]
    Version { path: String, version: u32 },

    /// Weight record does not match the declared backbone.
    #[error("weight geometry mismatch at layer {layer}: {reason}")]
    WeightGeometry { layer: usize, reason: String },

    /// Weight file ended early; `layer` names the record being read.
    #[error("weight file truncated at layer {layer}: {reason}")]
    Truncated { layer: usize, reason: String },

    /// Value outside the representable range of a format (e.g. class >= 256).
    #[error("range error: {0}")]
    Range(String),

    /// Metric has no defined value on this input (empty matrix, constant series).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// A runtime verification (equivalence check, monotonicity assertion) failed.
    #[error("verification failed: {0}")]
    Verification(String),

    /// Command-line misuse not caught by the argument parser.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl TtrError {
    /// Process exit code: 1 assertion/verification failure, 2 usage/config
    /// error, 3 I/O or format error.
    pub fn exit_code(&self) -> i32 {
        use TtrError::*;
        match self {
            Verification(_) | Invariant(_) | UndefinedMetric(_) => 1,
            Config(_) | Dimension(_) | Usage(_) => 2,
            Parse { .. }
            | UnsupportedDepth { .. }
            | BadMagic { .. }
            | Version { .. }
            | WeightGeometry { .. }
            | Truncated { .. }
            | Range(_)
            | StreamConsistency(_)
            | Io { .. } => 3,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        TtrError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
