//! Treatment-effect estimation and inference for matched-pairs randomized
//! experiments with covariate adjustment.
//!
//! The pipeline is: build an [`ExperimentData`] (units plus a
//! [`PairingPlan`]), choose an [`AdjustmentSpec`], and call
//! [`inference::estimate`] to get an [`EstimateReport`] with the estimate,
//! its matched-pairs standard error, a confidence interval and a test.
//! [`design`] builds pairings and assignments; [`simulation`] runs the
//! Monte Carlo study.

pub mod cli;
pub mod design;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod inference;
pub mod normal;
pub mod regression;
pub mod simulation;
pub mod stream;

pub use error::{Error, Result};
pub use estimators::{AdjustmentKind, AdjustmentSpec, CrossTerms, PsiSource};
pub use experiment::{
    adjusted_outcomes, doubly_robust_estimate, validate_experiment, EstimateReport, ExperimentData, PairingPlan,
    UnitRecord, Validation, WorkingModel,
};
pub use inference::{confidence_interval, estimate, test_ate, variance_adjusted, VarianceReport};
