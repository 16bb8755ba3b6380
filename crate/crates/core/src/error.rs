use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid matrix: {0}")]
    Matrix(String),

    #[error("gather index {index} out of range for vector of length {len}")]
    GatherOutOfRange { index: u32, len: usize },

    #[error("unaligned DRAM address {0:#x}")]
    Unaligned(u64),

    #[error("memory image regions overlap at {0:#x}")]
    Overlap(u64),

    #[error("simulation stalled at cycle {cycle}: {what}")]
    Deadlock { cycle: u64, what: String },

    #[error("bad cache file: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
