//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: expected length {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("negative count at sample {row}, gene {col}")]
    NegativeCount { row: usize, col: usize },

    #[error("non-integer count at sample {row}, gene {col}")]
    NonIntegerCount { row: usize, col: usize },

    #[error("duplicate identifier `{id}`")]
    DuplicateId { id: String },

    #[error("condition label {label} for sample {sample} is outside 1..={k}")]
    UnknownCondition {
        sample: usize,
        label: usize,
        k: usize,
    },

    #[error("condition `{condition}` has {count} samples; at least 2 are required")]
    TooFewSamples { condition: String, count: usize },

    #[error("no gene has strictly positive counts in every sample")]
    NoReferenceGene,

    #[error("size factor {value} at sample {index} is not strictly positive and finite")]
    InvalidSizeFactor { index: usize, value: f64 },

    #[error("scaled Wald statistic is defined for two conditions only (K = {k})")]
    ScaledWaldRequiresTwoGroups { k: usize },

    #[error("gene fit with status {status} has no usable statistic")]
    FitNotUsable { status: &'static str },

    #[error("no analyzable genes carry both an observed and a null statistic")]
    EmptyStatistics,

    #[error("{method} does not support covariate adjustment")]
    CovariatesUnsupported { method: String },

    #[error("{what} requires exactly two conditions (K = {k})")]
    RequiresTwoGroups { what: String, k: usize },

    #[error("negative binomial mean must be finite and positive, got {mu}")]
    InvalidNbMean { mu: f64 },

    #[error("negative binomial dispersion must be finite and positive, got {phi}")]
    InvalidNbDispersion { phi: f64 },

    #[error("both groups must be nonempty for the rank-sum test")]
    EmptyGroup,

    #[error("invalid configuration: {msg}")]
    InvalidConfig { msg: String },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the error reflects bad input (files, labels, shapes, flags)
    /// rather than an internal pipeline failure. The CLI maps input errors
    /// to exit code 2 and everything else to exit code 3.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::FitNotUsable { .. } | Error::EmptyStatistics)
    }
}
