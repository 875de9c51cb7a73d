use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },
    #[error("corrupt record {record} in {path}: label byte {label} is out of range")]
    CorruptRecord { path: PathBuf, record: usize, label: u8 },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("class {class} has {count} sample(s); cannot place it on both sides of a split")]
    DegenerateClass { class: usize, count: usize },
    #[error("shard for client {client} is empty; its distribution is undefined")]
    EmptyShard { client: usize },
    #[error("every shard in the partition is empty")]
    EmptyPartition,
    #[error("profile too steep: tail count rounds to zero (n_max={n_max}, imbalance factor={target_if})")]
    ProfileTooSteep { n_max: u64, target_if: f64 },
    #[error("class {class} needs {needed} samples but only {available} are available")]
    Capacity {
        class: usize,
        needed: usize,
        available: usize,
    },
    #[error("infeasible partition spec: {0}")]
    InfeasibleSpec(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("aggregation over zero total samples")]
    ZeroTotalSamples,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_round(self, round: usize) -> Self {
        match self {
            e @ Error::Round { .. } => e,
            other => Error::Round {
                round,
                source: Box::new(other),
            },
        }
    }
}
