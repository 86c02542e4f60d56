//! Batched adaptive experiments over K arms with binary rewards.
//!
//! The crate is organised bottom-up:
//!
//! - [`posterior`]: Beta-Bernoulli posteriors, conjugate updates and sampling.
//! - [`allocation`]: uniform, Thompson Sampling and epsilon-hybrid arm selection,
//!   plus the Monte-Carlo probability that each arm is optimal.
//! - [`engine`]: the experiment state machine (open batch, record rewards,
//!   close), snapshots and stores.
//! - [`simulator`]: synthetic Bernoulli environments, single runs, replication
//!   campaigns and table rendering.
//! - [`analysis`]: cumulative click rates and fixed-effects panel OLS with z-tests.
//!
//! The numeric core is generic over [`Scalar`] (implemented for `f32` and `f64`);
//! the aliases below pin the common double-precision instantiations.

pub mod allocation;
pub mod analysis;
pub mod engine;
mod error;
pub mod posterior;
pub mod rng;
mod scalar;
pub mod simulator;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use allocation::{AllocationPolicy, AllocationSource, ProbOptimal};
pub use engine::{AssignmentRecord, ExperimentConfig, ExperimentState, Status};
pub use posterior::{ArmId, Reward};
pub use simulator::{Environment, Trajectory};

/// Double-precision Beta posterior, the type the engine stores.
pub type BetaParams = posterior::BetaParams<f64>;
/// Single-precision Beta posterior.
pub type BetaParams32 = posterior::BetaParams<f32>;
/// Double-precision regression output.
pub type RegressionResult = analysis::RegressionResult<f64>;
/// Single-precision regression output.
pub type RegressionResult32 = analysis::RegressionResult<f32>;
