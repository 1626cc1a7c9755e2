//! Simulation study: data-generating process, censoring calibration and the
//! Monte Carlo harness.

pub mod calibrate;
pub mod dgp;
pub mod monte_carlo;
pub mod scenario;

pub use calibrate::{calibrate_censoring, Calibration};
pub use dgp::{generate_replicate, Replicate};
pub use monte_carlo::{run_monte_carlo, MethodSummary, SimResult, Summary};
pub use scenario::{Link, LogisticExposure, SimScenario, SimTau, UnmeasuredLaw};
