use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("feature row {row} has zero norm")]
    ZeroNormRow { row: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("class {class} has no support samples")]
    EmptyClass { class: usize },

    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("invalid probability input: {0}")]
    InvalidDistribution(String),

    #[error("weight update for class {class} has a zero denominator")]
    ZeroDenominator { class: usize },

    #[error("{what} = {value} is outside its domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: String,
    },

    #[error("class {class} has {available} samples, {needed} needed")]
    InsufficientSamples {
        class: usize,
        needed: usize,
        available: usize,
    },

    #[error("invalid episode spec: {0}")]
    InvalidEpisode(String),

    #[error("bad embedding file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("truncated embedding file {path}: {reason}")]
    Truncated { path: PathBuf, reason: String },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: u64, num_classes: u64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("episode {index} failed: {source}")]
    Episode {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short stable identifier, used for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ZeroNormRow { .. } => "zero_norm_row",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::EmptyClass { .. } => "empty_class",
            Error::InvalidTask(_) => "invalid_task",
            Error::InvalidHyperparameter(_) => "invalid_hyperparameter",
            Error::InvalidDistribution(_) => "invalid_distribution",
            Error::ZeroDenominator { .. } => "zero_denominator",
            Error::Domain { .. } => "domain",
            Error::InsufficientSamples { .. } => "insufficient_samples",
            Error::InvalidEpisode(_) => "invalid_episode",
            Error::Format { .. } => "format",
            Error::Truncated { .. } => "truncated",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::Config(_) => "config",
            Error::Episode { .. } => "episode",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
