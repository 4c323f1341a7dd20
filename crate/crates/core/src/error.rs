use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("problem has no samples")]
    EmptyProblem,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("arm index {arm} out of range for {arms} arms")]
    InvalidArm { arm: usize, arms: usize },

    #[error("empty dominance region for arm {arm}")]
    EmptyDominanceRegion { arm: usize },

    #[error("no dominance mass: p_star must be positive, got {0}")]
    NoDominanceMass(f64),

    #[error("epoch out of order: expected {expected}, got {found}")]
    EpochOutOfOrder { expected: usize, found: usize },

    #[error("batch size mismatch: expected {expected}, got {found}")]
    BatchSize { expected: usize, found: usize },

    #[error(
        "epoch {epoch} is a teamwork epoch for arm {expected} but user {user} was labelled {found}"
    )]
    TeamworkArmMismatch {
        epoch: usize,
        user: usize,
        expected: usize,
        found: usize,
    },

    #[error("sample set is empty")]
    EmptySampleSet,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}
