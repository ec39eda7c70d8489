//! Finite-sample behaviour of doubly-robust treatment effect estimators under
//! varying covariate overlap.
//!
//! The crate has three layers:
//!
//! * [`datagen`], [`models`], [`estimators`] and [`diagnostics`] are pure
//!   functions over explicit inputs (and an explicit RNG where sampling is
//!   involved).
//! * [`simharness`] drives the Monte Carlo study over scenarios, model
//!   specifications and estimators, and writes the result tables.
//! * [`analyze`] applies the same estimators to a user-supplied CSV with
//!   nonparametric bootstrap uncertainty.

pub mod analyze;
pub mod data;
pub mod datagen;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod models;
pub mod seed;
pub mod simharness;
pub(crate) mod stats;

pub use data::{Arm, Observations};
pub use datagen::{Scenario, SimDataset};
pub use error::{Error, EstimateError, FitError, Result};
pub use estimators::{EstimateSet, EstimatorConfig, Method};
pub use models::{CovariateForm, FittedModels, LogisticFit, ModelSpec, OutcomeFit, OutcomeStructure};
pub use seed::ReplicateSeed;
pub use simharness::{MetricsTable, RunConfig, RunOutput};
