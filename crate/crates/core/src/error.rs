use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input contains NaN or infinite values")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("requested rank {rank} plus oversampling {oversampling} exceeds min dimension {limit}")]
    RankTooLarge {
        rank: usize,
        oversampling: usize,
        limit: usize,
    },
    #[error("snapshot has zero norm")]
    ZeroSnapshot,

    #[error("corrupt payload: {0}")]
    CorruptPayload(String),
    #[error("unknown codec mode byte {0:#04x}")]
    UnknownMode(u8),

    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad container magic")]
    BadMagic,
    #[error("unsupported container version {0}")]
    VersionMismatch(u32),
    #[error("global node {0} is not covered by any partition")]
    IncompleteCoverage(usize),
    #[error("node {id} has inconsistent duplicate values {first} and {second}")]
    InconsistentDuplicate { id: usize, first: f64, second: f64 },

    #[error("all singular values are zero")]
    AllZero,
    #[error("singular value {index} is numerically zero; usable rank is {usable}")]
    SingularTruncation { index: usize, usable: usize },
    #[error("need at least {needed} snapshots, got {found}")]
    TooFewSnapshots { needed: usize, found: usize },
    #[error("stream has {accepted} accepted snapshots, needs {needed}")]
    NotEnoughSnapshots { accepted: usize, needed: usize },

    #[error("image decode failed: {0}")]
    DecodeFailure(String),
    #[error("frame {found} arrived while waiting for frame {expected}")]
    OutOfOrderFrame { expected: usize, found: usize },

    #[error("reference has zero norm")]
    ZeroReference,
    #[error("conserved quantity is zero at step {0}")]
    ZeroMass(usize),
    #[error("window {window} larger than image {width}x{height}")]
    WindowTooLarge {
        window: usize,
        width: usize,
        height: usize,
    },

    #[error("bad generator spec: {0}")]
    BadSpec(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }
}
