use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} is outside the INT8 range [-128, 127]")]
    OutOfRange { value: i64 },

    #[error("expected {expected} elements, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("token id {0} is outside the tile (0..64)")]
    TokenOutOfRange(usize),

    #[error("token {0} has not been written")]
    Unwritten(usize),

    #[error("q-bit index {0} is outside 0..4")]
    BitIndex(usize),

    #[error("degenerate query: no column participates in charge sharing")]
    DegenerateQuery,

    #[error("expected 16 RBL samples for token {token}, got {actual}")]
    MissingSamples { token: usize, actual: usize },

    #[error("softmax over an empty score list")]
    EmptyScores,

    #[error("hybrid energy is zero; savings are undefined")]
    ZeroHybridEnergy,

    #[error("invalid workload spec: {0}")]
    InvalidSpec(String),

    #[error("tensor format: {0}")]
    Format(String),

    #[error("config: {0}")]
    Config(String),

    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
