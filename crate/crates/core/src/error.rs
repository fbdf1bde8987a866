use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),

    #[error("negative standard deviation {0}")]
    NegativeSigma(f64),

    #[error("bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    IdxBadMagic { expected: u32, found: u32 },

    #[error("truncated {what}: expected {expected} bytes, found {found}")]
    Truncated {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("missing digit class {0}")]
    MissingClass(u8),

    #[error("row {row}: expected {expected} columns, found {found}")]
    ColumnCount {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("row {row}, column {col}: cannot parse {cell:?} as a number")]
    NonNumeric {
        row: usize,
        col: usize,
        cell: String,
    },

    #[error("sequence {index} has length {len}, need at least {min}")]
    SequenceTooShort {
        index: usize,
        len: usize,
        min: usize,
    },

    #[error("could not place {balls} non-overlapping balls after {attempts} attempts")]
    Placement { balls: usize, attempts: usize },

    #[error("prediction buffer holds timestep {found}, expected {expected}")]
    BufferTimestep { expected: usize, found: usize },

    #[error("horizon {horizon} exceeds prediction depth {depth}")]
    Horizon { horizon: usize, depth: usize },

    #[error("checkpoint bad magic {0:?}")]
    CheckpointMagic([u8; 4]),

    #[error("checkpoint version {found} unsupported (expected {expected})")]
    CheckpointVersion { expected: u32, found: u32 },

    #[error("checkpoint truncated at byte {0}")]
    CheckpointTruncated(usize),

    #[error(
        "checkpoint integrity check failed: stored crc {stored:#010x}, computed {computed:#010x}"
    )]
    CheckpointIntegrity { stored: u32, computed: u32 },

    #[error("checkpoint missing record {0:?}")]
    CheckpointMissing(String),

    #[error("config: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: non-finite {metric}")]
    Diverged { epoch: usize, metric: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::ShapeMismatch { op, left, right }
    }
}
