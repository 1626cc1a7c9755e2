//! Two-stage instrumental-variable estimation for the additive
//! subdistribution-hazard model of competing risks.
//!
//! The pipeline is: [`data::center`] the covariates, estimate the censoring
//! distribution ([`censoring::fit_km_censoring`]) and IPCW weights
//! ([`censoring::build_ipcw`]), regress the exposure on the instrument
//! ([`first_stage::fit_first_stage`]), solve the second-stage estimating
//! equations ([`additive::fit_iv`] or [`additive::fit_naive`]), and derive the
//! sandwich covariance from influence functions
//! ([`inference::influence_functions`], [`inference::sandwich_variance`]).
//! [`pipeline::fit_pipeline`] chains all of it.

pub mod additive;
pub mod artifact;
pub mod censoring;
pub mod cli;
pub mod data;
pub mod error;
pub mod first_stage;
pub mod inference;
pub mod linalg;
pub mod pipeline;
pub mod prediction;
pub mod report;
pub mod sim;

pub use additive::{fit_iv, fit_naive, FitMode, SubdistFit};
pub use data::{center, load_dataset, Dataset, FitOptions, Schema, Subject, Tau};
pub use error::{Error, Result};
pub use pipeline::{fit_pipeline, Pipeline};
