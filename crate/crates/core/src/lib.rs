//! Restless multi-armed bandits under long-run average reward.
//!
//! Exact per-arm solvers (relative value iteration, Lagrangian and Whittle
//! indices, the dual problem), closed forms for the restart model, tabular
//! and neural two-timescale learners, index-policy simulation and fluid
//! limit checks.

pub mod approx;
pub mod arm;
pub mod error;
pub mod exact;
pub mod fluid;
pub mod harness;
pub mod models;
pub mod restart;
pub mod schedule;
pub mod sim;
pub mod stats;
pub mod tabular;

pub use arm::{Action, ArmModel, BanditInstance, LambdaConvention, State};
pub use error::{Error, Result};
