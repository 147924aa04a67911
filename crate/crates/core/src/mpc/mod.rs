//! Receding-horizon planner for the dynamic-reward monitoring problem.

pub mod kop;
mod ocp;
mod planner;
mod sample;

pub use ocp::{
    cost_and_gradient, exact_cost, rollout, rollout_exact, total_cost, CostConfig, OcpProblem, Rollout, StageMode,
    TerminalMode,
};
pub use planner::{plan_step, shift_warm_start, ControlPlan, PlanOutcome, PlannerConfig, PlannerProblem};
pub use sample::{gradient_error, random_problem};
