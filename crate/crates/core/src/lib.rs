//! Multi-vehicle monitoring of dynamic reward fields with receding-horizon
//! trajectory optimization.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod models;
pub mod mpc;
pub mod nlp;
pub mod sim;

pub use error::{Error, Result};
pub use models::{
    FleetState, MotionLimits, RewardVector, SensorParams, Target, TargetSet, Vec2, VehicleState,
};
