use std::path::PathBuf;

use thiserror::Error;

use crate::data::Arm;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure of a working-model fit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("design is rank deficient: {rows} rows for {cols} columns")]
    TooFewRows { rows: usize, cols: usize },
    #[error("design is rank deficient: column {column} is collinear with earlier columns")]
    RankDeficient { column: usize },
    #[error("only {arm} units present; both arms are required")]
    SingleArm { arm: Arm },
    #[error("length mismatch: design has {rows} rows but vector has {len} entries")]
    LengthMismatch { rows: usize, len: usize },
    #[error("covariate form {form} needs at least {needed} covariate columns, got {got}")]
    TooFewCovariates { form: &'static str, needed: usize, got: usize },
}

/// Failure of a single estimator cell. Cells fail independently.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("propensity score {value} at unit {index} is outside (0, 1)")]
    DegeneratePropensity { index: usize, value: f64 },
    #[error("no {arm} units")]
    EmptyArm { arm: Arm },
    #[error("overlap weights sum to zero in the {arm} arm")]
    ZeroDenominator { arm: Arm },
    #[error("trim threshold {0} is outside (0, 0.5)")]
    InvalidTrim(f64),
    #[error("input lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("propensity model: {0}")]
    PsFit(FitError),
    #[error("outcome model: {0}")]
    OutcomeFit(FitError),
}

impl EstimateError {
    /// Short machine-readable reason code, used for per-cell missingness
    /// reporting.
    pub fn code(&self) -> &'static str {
        match self {
            EstimateError::DegeneratePropensity { .. } => "degenerate_ps",
            EstimateError::EmptyArm { .. } => "empty_arm",
            EstimateError::ZeroDenominator { .. } => "zero_denominator",
            EstimateError::InvalidTrim(_) => "invalid_trim",
            EstimateError::LengthMismatch(..) => "length_mismatch",
            EstimateError::PsFit(_) => "ps_fit",
            EstimateError::OutcomeFit(_) => "outcome_fit",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dataset has no {arm} units")]
    EmptyArm { arm: Arm },
    #[error("intercept calibration failed: {0}")]
    Calibration(String),
    #[error("config error at {field}: {message}")]
    Config { field: String, message: String },
    #[error("{path}: row {row}, column `{column}`: {message}")]
    Ingest { path: PathBuf, row: usize, column: String, message: String },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
