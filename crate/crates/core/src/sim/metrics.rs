//! Monitoring-quality and solver-time summaries of a run.

use serde::{Deserialize, Serialize};

use crate::models::pairwise_min_distance;

use super::run::{ConstraintFlag, RunTrace};

pub const METRICS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub schema_version: u32,
    pub scenario: String,
    pub planner: String,
    pub seed: u64,
    /// Applied controls.
    pub steps: usize,
    pub sample_time: f64,
    /// Mean evaluation reward over the targets present, for every recorded step.
    pub r_avg: Vec<f64>,
    /// First step counted in `r_eq`.
    pub warmup_steps: usize,
    /// Mean of `r_avg` after warm-up.
    pub r_eq: f64,
    /// Largest `r_avg` after warm-up.
    pub r_avg_peak: f64,
    /// Largest evaluation reward of any target at any step.
    pub r_max: f64,
    /// Mean and largest planner wall time per solve, milliseconds.
    pub t_avg_ms: f64,
    pub t_max_ms: f64,
    pub solves: usize,
    pub min_separation: f64,
    pub max_speed: f64,
    /// Largest per-axis acceleration magnitude.
    pub max_abs_accel: f64,
    pub infeasible_steps: usize,
    pub brake_steps: usize,
    pub clipped_steps: usize,
    pub failure: Option<String>,
}

pub fn compute_metrics(trace: &RunTrace) -> MetricsSummary {
    let r_avg: Vec<f64> = trace
        .records
        .iter()
        .map(|r| {
            if r.r_eval.is_empty() {
                0.0
            } else {
                r.r_eval.iter().sum::<f64>() / r.r_eval.len() as f64
            }
        })
        .collect();
    let n = r_avg.len();
    let warmup_steps = ((trace.warmup_fraction * n as f64).floor() as usize).min(n.saturating_sub(1));
    let tail = &r_avg[warmup_steps..];
    let r_eq = if tail.is_empty() { 0.0 } else { tail.iter().sum::<f64>() / tail.len() as f64 };
    let r_avg_peak = tail.iter().copied().fold(0.0, f64::max);
    let r_max = trace
        .records
        .iter()
        .flat_map(|r| r.r_eval.iter().copied())
        .fold(0.0, f64::max);

    let times: Vec<f64> = trace.records.iter().filter_map(|r| r.plan.as_ref()).filter(|p| p.status != "held").map(|p| p.solver_ms).collect();
    let t_avg_ms = if times.is_empty() { 0.0 } else { times.iter().sum::<f64>() / times.len() as f64 };
    let t_max_ms = times.iter().copied().fold(0.0, f64::max);

    let mut min_separation = f64::INFINITY;
    let mut max_speed: f64 = 0.0;
    let mut max_abs_accel: f64 = 0.0;
    for r in &trace.records {
        let q: Vec<_> = r.vehicles.iter().map(|s| s.q).collect();
        min_separation = min_separation.min(pairwise_min_distance(&q).0);
        for s in &r.vehicles {
            max_speed = max_speed.max(s.speed());
        }
        for a in r.control.iter().flatten() {
            max_abs_accel = max_abs_accel.max(a[0].abs()).max(a[1].abs());
        }
    }
    let count = |flag| trace.records.iter().filter(|r| r.constraint_flag == flag).count();

    MetricsSummary {
        schema_version: METRICS_SCHEMA_VERSION,
        scenario: trace.scenario.clone(),
        planner: trace.planner.as_str().into(),
        seed: trace.seed,
        steps: trace.steps(),
        sample_time: trace.sample_time,
        r_avg,
        warmup_steps,
        r_eq,
        r_avg_peak,
        r_max,
        t_avg_ms,
        t_max_ms,
        solves: times.len(),
        min_separation,
        max_speed,
        max_abs_accel,
        infeasible_steps: count(ConstraintFlag::Infeasible),
        brake_steps: count(ConstraintFlag::Brake),
        clipped_steps: count(ConstraintFlag::Clipped),
        failure: trace.failure.clone(),
    }
}
