use thiserror::Error;

/// Errors produced by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("network invariant violated: {0}")]
    Invariant(String),

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unsupported weight file version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("event stream out of order: pixel ({x}, {y}) arrived after ({prev_x}, {prev_y})")]
    OutOfOrder {
        x: usize,
        y: usize,
        prev_x: usize,
        prev_y: usize,
    },

    #[error("unsorted camera stream at spike index {index}")]
    Unsorted { index: usize },

    #[error("codec error: {0}")]
    Codec(String),

    #[error("memory budget exceeded on core {core}: needs {needed} bytes, budget {budget}")]
    MemoryBudget {
        core: usize,
        needed: usize,
        budget: usize,
    },

    #[error("causality violation on core {core}: {message}")]
    Causality { core: usize, message: String },

    #[error("no valid pixels")]
    NoValidPixels,

    #[error("training diverged at epoch {epoch}: {message}")]
    Divergence { epoch: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
