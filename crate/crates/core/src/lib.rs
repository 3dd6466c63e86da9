//! Policy-gradient reinforcement learning with weak (Jordan-decomposed)
//! derivatives of a Gaussian policy.
//!
//! The crate is organised bottom-up:
//!
//! - [`env`]: bounded-reward simulators (pendulum swing-up plus analytic
//!   test environments).
//! - [`policy`]: linear-in-features Gaussian policy, its score function and
//!   the split of its parameter derivative into two reflected Rayleigh laws.
//! - [`estimator`]: geometric-horizon rollouts and the weak-derivative
//!   (`Wd`) and score-function (`Sf`) gradient estimators.
//! - [`optimizer`]: stochastic gradient ascent with a `c * k^-b` schedule.
//! - [`analysis`]: return evaluation, finite-difference oracle, variance and
//!   sample-accounting statistics.
//! - [`cli`]: config parsing and the experiment subcommands.
//!
//! Transcendental functions come from `libm`, so results do not depend on the
//! optimisation level or the system C library.

pub mod analysis;
pub mod cli;
pub mod env;
pub mod error;
pub mod estimator;
pub mod optimizer;
pub mod policy;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
