//! Response-adaptive randomization: urn and coin designs, allocation
//! targets, a sequential trial engine and Monte Carlo evaluation.

pub mod catalog;
pub mod coins;
pub mod delay;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod targets;
pub mod urns;

pub use engine::{run_trial, Allocation, Context, Design, Trial, TrialSetup, TrialState, WarmStart};
pub use error::{Error, Result};
pub use models::{Family, ResponseModel, Theta};
pub use rng::SeedTree;
