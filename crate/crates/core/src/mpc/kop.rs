//! Kinematic orienteering: collect static node scores between a fixed start and
//! end point within a travel-time budget, using the planner with the reward
//! dynamics switched off.
//!
//! # Instance format
//!
//! Plain text in the layout of the Tsiligirides / Chao orienteering sets:
//!
//! ```text
//! 15.0 1
//! 4.6 7.1 0
//! 5.7 11.4 20
//! 5.0 5.6 0
//! ```
//!
//! The first non-empty line carries the original budget followed by optional
//! metadata (usually the number of paths); only its first token is read. Every
//! following non-empty line is `x y score`, whitespace separated. The first node
//! is the start, the last node is the end, and everything in between is a
//! scored node. Lines starting with `#` are ignored.

use std::path::Path;
use std::time::{Duration, Instant};

use super::ocp::{rollout_exact, CostConfig, OcpProblem, Rollout, StageMode, TerminalMode};
use super::planner::{finish_outcome, run_starts, select_start, PlanOutcome, PlannerConfig, PlannerProblem};
use crate::error::{Error, Result};
use crate::nlp::{minimize, SolverConfig};
use crate::models::{dist, FleetState, MotionLimits, RewardVector, Saturation, SensorParams, Vec2, VehicleState};

#[derive(Debug, Clone, PartialEq)]
pub struct OpInstance {
    pub name: String,
    /// Budget stated in the file header.
    pub budget: f64,
    pub start: Vec2,
    pub end: Vec2,
    /// Scored nodes `(position, score)`, excluding start and end.
    pub nodes: Vec<(Vec2, f64)>,
}

impl OpInstance {
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: name.to_string(),
            line,
            message,
        };
        let mut budget = None;
        let mut points: Vec<(Vec2, f64, usize)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let numbers = tokens
                .iter()
                .map(|t| t.parse::<f64>().map_err(|_| err(line_no, format!("`{t}` is not a number"))))
                .collect::<Result<Vec<f64>>>()?;
            if numbers.iter().any(|v| !v.is_finite()) {
                return Err(err(line_no, "non-finite value".into()));
            }
            if budget.is_none() {
                if numbers[0] <= 0.0 {
                    return Err(err(line_no, "budget must be positive".into()));
                }
                budget = Some(numbers[0]);
                continue;
            }
            if numbers.len() != 3 {
                return Err(err(line_no, format!("expected `x y score`, found {} fields", numbers.len())));
            }
            if numbers[2] < 0.0 {
                return Err(err(line_no, "score must be non-negative".into()));
            }
            points.push(([numbers[0], numbers[1]], numbers[2], line_no));
        }
        let budget = budget.ok_or_else(|| err(0, "missing header line".into()))?;
        if points.len() < 2 {
            return Err(err(text.lines().count(), "need at least a start and an end node".into()));
        }
        let start = points[0].0;
        let end = points[points.len() - 1].0;
        let nodes = points[1..points.len() - 1].iter().map(|&(p, s, _)| (p, s)).collect();
        Ok(OpInstance {
            name: name.to_string(),
            budget,
            start,
            end,
            nodes,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        OpInstance::parse(&path.display().to_string(), &text)
    }

    pub fn total_score(&self) -> f64 {
        self.nodes.iter().map(|n| n.1).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KopParams {
    pub sample_time: f64,
    pub sensor: SensorParams,
    pub v_max: f64,
    pub a_max: f64,
    pub terminal_weight: f64,
    pub input_penalty: f64,
    /// A node counts as collected when the trajectory passes this close to it.
    pub visit_radius: f64,
    /// Each start first solves with a wide sensor cutoff and shrinks it by
    /// `cutoff_ratio` per solve until it drops below `cutoff_floor`, warm
    /// starting every solve from the previous one. The widest cutoff is spread
    /// geometrically over `initial_cutoffs` across the starts.
    pub initial_cutoffs: (f64, f64),
    pub cutoff_ratio: f64,
    pub cutoff_floor: f64,
    /// Solver settings for the intermediate cutoffs.
    pub stage_solver: SolverConfig,
    /// Solver settings for the final solve at the true cutoff.
    pub final_solver: SolverConfig,
    pub multistart_count: usize,
    /// Standard deviation of the noise added to the node scores for every
    /// start but the first.
    pub reward_noise_sigma: f64,
    pub seed: u64,
}

impl Default for KopParams {
    fn default() -> Self {
        KopParams {
            sample_time: 0.1,
            sensor: SensorParams { cutoff: 0.05, degree: 2 },
            v_max: 3.0,
            a_max: 1.5,
            terminal_weight: 1e3,
            input_penalty: 1e-3,
            visit_radius: 0.02,
            initial_cutoffs: (0.1, 2.0),
            cutoff_ratio: 0.7,
            cutoff_floor: 0.075,
            stage_solver: SolverConfig {
                max_outer_iters: 15,
                max_inner_iters: 300,
                memory: 20,
                relative_tol: true,
                relative_decrease_tol: 1e-12,
                ..SolverConfig::default()
            },
            final_solver: SolverConfig {
                max_outer_iters: 30,
                max_inner_iters: 3000,
                memory: 20,
                relative_tol: true,
                relative_decrease_tol: 1e-12,
                ..SolverConfig::default()
            },
            multistart_count: 10,
            reward_noise_sigma: 0.1,
            seed: 0,
        }
    }
}

/// Number of whole sampling periods that fit in the budget.
pub fn kop_horizon_steps(c_max: f64, sample_time: f64) -> usize {
    // The small slack absorbs representation error such as 10 / 0.1 = 99.999...
    ((c_max / sample_time) * (1.0 + 1e-12)).floor() as usize
}

/// Builds the planning problem for one budget: static targets at the node
/// positions with rewards equal to the scores and no reward growth.
pub fn configure_kop(instance: &OpInstance, c_max: f64, params: &KopParams) -> Result<OcpProblem> {
    if !(c_max > 0.0 && c_max.is_finite()) {
        return Err(Error::param("c_max", "must be finite and > 0"));
    }
    let steps = kop_horizon_steps(c_max, params.sample_time);
    if steps == 0 {
        return Err(Error::param("c_max", "shorter than one sampling period"));
    }
    let positions: Vec<Vec2> = instance.nodes.iter().map(|n| n.0).collect();
    Ok(OcpProblem {
        horizon_steps: steps,
        sample_time: params.sample_time,
        fleet: FleetState {
            vehicles: vec![VehicleState::at(instance.start[0], instance.start[1])],
            limits: MotionLimits {
                v_max: params.v_max,
                a_max: params.a_max,
                d_min: 0.0,
            },
        },
        rewards: RewardVector {
            values: instance.nodes.iter().map(|n| n.1).collect(),
            k_gain: 0.0,
        },
        target_trajectory: vec![positions; steps + 1],
        sensor: params.sensor,
        cost: CostConfig {
            stage: StageMode::Linear,
            terminal: TerminalMode::EndpointSoft {
                weight: params.terminal_weight,
                target: instance.end,
            },
            input_penalty: params.input_penalty,
        },
        previous_control: None,
        saturation: Saturation::DEFAULT_SMOOTH,
    })
}

/// Scored outcome of one executed kinematic-orienteering trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct KopScore {
    pub collected: f64,
    pub visited: Vec<usize>,
    /// Closest approach of the trajectory to each node.
    pub closest: Vec<f64>,
    pub endpoint_deviation: f64,
    pub duration: f64,
}

/// Minimum distance from `p` to the exact double-integrator path between samples.
fn closest_approach(traj: &Rollout, controls: &[f64], sample_time: f64, p: Vec2) -> f64 {
    const SUB: usize = 64;
    let mut best = f64::INFINITY;
    for k in 0..traj.steps {
        let q = traj.position(k, 0);
        let v = traj.velocity(k, 0);
        let a = [controls[2 * k], controls[2 * k + 1]];
        let at = |tau: f64| -> f64 {
            let x = q[0] + v[0] * tau + 0.5 * a[0] * tau * tau;
            let y = q[1] + v[1] * tau + 0.5 * a[1] * tau * tau;
            (x - p[0]).hypot(y - p[1])
        };
        // Coarse scan, then golden-section refinement around the best sample.
        let h = sample_time / SUB as f64;
        let (mut i_best, mut d_best) = (0, f64::INFINITY);
        for i in 0..=SUB {
            let d = at(i as f64 * h);
            if d < d_best {
                d_best = d;
                i_best = i;
            }
        }
        let (mut lo, mut hi) = ((i_best as f64 - 1.0).max(0.0) * h, ((i_best + 1) as f64 * h).min(sample_time));
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..60 {
            let m1 = hi - phi * (hi - lo);
            let m2 = lo + phi * (hi - lo);
            if at(m1) < at(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        best = best.min(d_best).min(at(0.5 * (lo + hi)));
    }
    best.min(dist(traj.position(traj.steps, 0), p))
}

/// Scores the single-vehicle trajectory predicted by `traj` with `controls`.
pub fn score_kop(instance: &OpInstance, traj: &Rollout, controls: &[f64], params: &KopParams) -> KopScore {
    let closest: Vec<f64> = instance
        .nodes
        .iter()
        .map(|(p, _)| closest_approach(traj, controls, params.sample_time, *p))
        .collect();
    let visited: Vec<usize> = closest
        .iter()
        .enumerate()
        .filter(|(_, &d)| d <= params.visit_radius)
        .map(|(i, _)| i)
        .collect();
    KopScore {
        collected: visited.iter().fold(0.0, |acc, &i| acc + instance.nodes[i].1),
        visited,
        closest,
        endpoint_deviation: dist(traj.position(traj.steps, 0), instance.end),
        duration: traj.steps as f64 * params.sample_time,
    }
}

#[derive(Debug, Clone)]
pub struct KopRun {
    pub c_max: f64,
    pub horizon_steps: usize,
    pub score: KopScore,
    /// Collected score of every start, in start order.
    pub start_scores: Vec<f64>,
    pub outcome: PlanOutcome,
    /// Mean wall time per start.
    pub time_per_start: Duration,
}

/// Intermediate cutoffs used by start `start`, widest first.
pub fn cutoff_schedule(params: &KopParams, start: usize) -> Vec<f64> {
    let (lo, hi) = params.initial_cutoffs;
    let frac = if params.multistart_count > 1 {
        start as f64 / (params.multistart_count - 1) as f64
    } else {
        0.0
    };
    let mut c = lo * (hi / lo).powf(frac);
    let mut out = Vec::new();
    while c > params.cutoff_floor && c > params.sensor.cutoff {
        out.push(c);
        c *= params.cutoff_ratio;
    }
    out
}

/// Solves one budget with `params.multistart_count` reward-perturbed starts
/// and scores the best plan under the exact reward model.
///
/// Each start walks the cutoff schedule from zero controls, so the route is
/// shaped by wide footprints before the true one sharpens it.
pub fn solve_kop(instance: &OpInstance, c_max: f64, params: &KopParams) -> Result<KopRun> {
    let ocp = configure_kop(instance, c_max, params)?;
    ocp.validate()?;
    let (lo, hi) = params.initial_cutoffs;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::param("initial_cutoffs", "need 0 < low <= high"));
    }
    if !(params.cutoff_ratio > 0.0 && params.cutoff_ratio < 1.0) {
        return Err(Error::param("cutoff_ratio", "must lie in (0, 1)"));
    }
    if !(params.cutoff_floor > 0.0) {
        return Err(Error::param("cutoff_floor", "must be > 0"));
    }
    params.stage_solver.validate()?;
    let planner = PlannerConfig {
        multistart_count: params.multistart_count,
        reward_noise_sigma: params.reward_noise_sigma,
        warm_start: false,
        solver: params.final_solver.clone(),
        seed: params.seed,
    };
    planner.validate()?;
    let margin = params.final_solver.feasibility_tol;
    let started = Instant::now();
    let results = run_starts(&ocp, &planner, 0, |start, instance| {
        let mut x = vec![0.0; instance.control_dim()];
        let mut stage = instance.clone();
        for cutoff in cutoff_schedule(params, start) {
            stage.sensor.cutoff = cutoff;
            x = minimize(&PlannerProblem::new(&stage, margin), &x, &params.stage_solver)?.x;
        }
        minimize(&PlannerProblem::new(instance, margin), &x, &params.final_solver)
    })?;
    let scores = results
        .iter()
        .map(|r| Ok(score_kop(instance, &rollout_exact(&ocp, &r.report.x)?, &r.report.x, params)))
        .collect::<Result<Vec<KopScore>>>()?;
    // A plan that misses the end point is not a valid tour. Among valid plans
    // the best collected score wins, then the lower cost.
    let valid = |s: &KopScore| s.endpoint_deviation <= params.visit_radius;
    let any_valid = scores.iter().any(valid);
    let chosen = select_start(&results, planner.solver.feasibility_tol, |r| {
        let s = &scores[r.start];
        match (any_valid, valid(s)) {
            (true, true) => -s.collected * 1e9 + r.exact_cost,
            (true, false) => f64::INFINITY,
            (false, _) => s.endpoint_deviation,
        }
    });
    let start_scores = scores.iter().map(|s| s.collected).collect();
    let score = scores[chosen].clone();
    let outcome = finish_outcome(&ocp, &planner, results, chosen, started)?;
    let time_per_start = outcome.wall_time / params.multistart_count as u32;
    Ok(KopRun {
        c_max,
        horizon_steps: ocp.horizon_steps,
        score,
        start_scores,
        outcome,
        time_per_start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "5.0 1\n0.0 0.0 0\n1.0 0.2 10\n0.0 0.5 0\n";

    #[test]
    fn parses_three_line_sample() {
        let inst = OpInstance::parse("sample", SAMPLE).unwrap();
        assert_eq!(inst.budget, 5.0);
        assert_eq!(inst.start, [0.0, 0.0]);
        assert_eq!(inst.end, [0.0, 0.5]);
        assert_eq!(inst.nodes, vec![([1.0, 0.2], 10.0)]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match OpInstance::parse("bad", "5 1\n0 0 0\n1 x 3\n2 2 0\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match OpInstance::parse("bad", "5 1\n0 0 0\n1 2\n2 2 0\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(OpInstance::parse("bad", "5 1\n0 0 0\n").is_err());
        assert!(OpInstance::parse("bad", "").is_err());
    }

    #[test]
    fn configuration_follows_budget() {
        let inst = OpInstance::parse("sample", SAMPLE).unwrap();
        let p = KopParams::default();
        let ocp = configure_kop(&inst, 10.0, &p).unwrap();
        assert_eq!(ocp.horizon_steps, 100);
        assert!(ocp.horizon_steps as f64 * p.sample_time <= 10.0 + 1e-9);
        assert_eq!(ocp.rewards.k_gain, 0.0);
        assert_eq!(ocp.fleet.limits.v_max, 3.0);
        assert_eq!(ocp.fleet.limits.a_max, 1.5);
        assert_eq!(ocp.cost.stage, StageMode::Linear);
        assert_eq!(ocp.cost.terminal, TerminalMode::EndpointSoft { weight: 1e3, target: [0.0, 0.5] });
        for c in [0.35, 1.0, 7.3, 40.0] {
            let n = kop_horizon_steps(c, 0.1);
            assert!(n as f64 * 0.1 <= c + 1e-9);
            assert!((n + 1) as f64 * 0.1 > c);
        }
    }

    #[test]
    fn small_instance_is_collected() {
        let inst = OpInstance::parse("sample", SAMPLE).unwrap();
        let params = KopParams::default();
        let params = KopParams {
            multistart_count: 1,
            ..params
        };
        let run = solve_kop(&inst, 4.0, &params).unwrap();
        assert_eq!(run.score.collected, 10.0, "{:?}", run.score);
        assert!(run.score.endpoint_deviation <= 0.02, "{:?}", run.score);
        assert!(run.score.duration <= 4.0 + 1e-9);
    }
}
