use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::ocp::{backward_vehicles, cost_and_gradient, exact_cost, rollout, rollout_vehicles, OcpProblem, Rollout};
use crate::error::{Error, Result};
use crate::models::Vec2;
use crate::nlp::{minimize, NlpProblem, SolverConfig, SolverReport};

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    /// Number of solves per planning step; all but the first perturb the initial rewards.
    pub multistart_count: usize,
    /// Standard deviation of the Gaussian reward perturbation.
    pub reward_noise_sigma: f64,
    pub warm_start: bool,
    pub solver: SolverConfig,
    pub seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            multistart_count: 1,
            reward_noise_sigma: 0.0,
            warm_start: true,
            solver: SolverConfig::default(),
            seed: 0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.multistart_count == 0 {
            return Err(Error::param("planner.multistart", "must be >= 1"));
        }
        if !(self.reward_noise_sigma >= 0.0 && self.reward_noise_sigma.is_finite()) {
            return Err(Error::param("planner.reward_noise_sigma", "must be finite and >= 0"));
        }
        self.solver.validate()
    }
}

/// Accelerations over the horizon plus the trajectory they predict.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPlan {
    pub steps: usize,
    pub vehicles: usize,
    /// Flattened as `[(k * vehicles + j) * 2 + axis]`.
    pub controls: Vec<f64>,
    pub predicted: Option<Rollout>,
}

impl ControlPlan {
    pub fn zeros(steps: usize, vehicles: usize) -> Self {
        ControlPlan {
            steps,
            vehicles,
            controls: vec![0.0; steps * vehicles * 2],
            predicted: None,
        }
    }

    pub fn control(&self, k: usize, j: usize) -> Vec2 {
        let base = (k * self.vehicles + j) * 2;
        [self.controls[base], self.controls[base + 1]]
    }

    /// Controls of the first interval, one per vehicle.
    pub fn first(&self) -> Vec<Vec2> {
        (0..self.vehicles).map(|j| self.control(0, j)).collect()
    }
}

/// Receding-horizon initial guess: drop the first step and repeat the last one.
pub fn shift_warm_start(prev: &ControlPlan) -> Vec<f64> {
    let width = prev.vehicles * 2;
    if prev.steps == 0 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(prev.controls.len());
    out.extend_from_slice(&prev.controls[width..]);
    out.extend_from_slice(&prev.controls[(prev.steps - 1) * width..]);
    out
}

/// NLP view of an [`OcpProblem`]: box on accelerations, smooth speed and
/// separation inequalities at steps `1..=N`.
pub struct PlannerProblem<'a> {
    ocp: &'a OcpProblem,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Limits used inside the inequalities; tightened by the feasibility tolerance.
    speed_limit: f64,
    separation: f64,
    pairs: Vec<(usize, usize)>,
    /// Multiplier applied to the OCP cost.
    scale: f64,
}

impl<'a> PlannerProblem<'a> {
    pub fn new(ocp: &'a OcpProblem, margin: f64) -> Self {
        let dim = ocp.control_dim();
        let limits = ocp.fleet.limits;
        let m = ocp.vehicles();
        let pairs = if limits.d_min > 0.0 {
            (0..m).flat_map(|a| (a + 1..m).map(move |b| (a, b))).collect()
        } else {
            Vec::new()
        };
        PlannerProblem {
            ocp,
            lower: vec![-limits.a_max; dim],
            upper: vec![limits.a_max; dim],
            speed_limit: (limits.v_max - margin).max(0.5 * limits.v_max),
            separation: limits.d_min + margin,
            pairs,
            scale: 1.0,
        }
    }

    /// Scales the cost so that its gradient at `x0` has max-norm at most
    /// one. Large reward states otherwise swamp the constraint penalties.
    pub fn normalized_at(mut self, x0: &[f64]) -> Self {
        if let Ok((_, grad)) = cost_and_gradient(self.ocp, x0) {
            let gmax = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if gmax.is_finite() && gmax > 1.0 {
                self.scale = 1.0 / gmax;
            }
        }
        self
    }

    fn speed_constraints(&self) -> usize {
        self.ocp.horizon_steps * self.ocp.vehicles()
    }
}

impl NlpProblem for PlannerProblem<'_> {
    fn dim(&self) -> usize {
        self.lower.len()
    }

    fn lower_bounds(&self) -> &[f64] {
        &self.lower
    }

    fn upper_bounds(&self) -> &[f64] {
        &self.upper
    }

    fn objective(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        match cost_and_gradient(self.ocp, x) {
            Ok((f, g)) => {
                for (out, gi) in grad.iter_mut().zip(&g) {
                    *out = gi * self.scale;
                }
                f * self.scale
            }
            Err(_) => {
                grad.fill(f64::NAN);
                f64::NAN
            }
        }
    }

    fn num_constraints(&self) -> usize {
        self.speed_constraints() + self.ocp.horizon_steps * self.pairs.len()
    }

    // Both families are scaled to read approximately in meters per second and meters.
    fn constraints(&self, x: &[f64], out: &mut [f64]) {
        let (q, v) = rollout_vehicles(self.ocp, x);
        let m = self.ocp.vehicles();
        let vl = self.speed_limit;
        let mut c = 0;
        for k in 1..=self.ocp.horizon_steps {
            for j in 0..m {
                let s = v[k * m + j];
                out[c] = (s[0] * s[0] + s[1] * s[1] - vl * vl) / (2.0 * vl);
                c += 1;
            }
        }
        let d = self.separation;
        for k in 1..=self.ocp.horizon_steps {
            for &(a, b) in &self.pairs {
                let (qa, qb) = (q[k * m + a], q[k * m + b]);
                let dd = (qa[0] - qb[0]).powi(2) + (qa[1] - qb[1]).powi(2);
                out[c] = (d * d - dd) / (2.0 * d);
                c += 1;
            }
        }
    }

    fn constraints_jtv(&self, x: &[f64], weights: &[f64], grad: &mut [f64]) {
        let (q, v) = rollout_vehicles(self.ocp, x);
        let m = self.ocp.vehicles();
        let mut dq = vec![[0.0; 2]; q.len()];
        let mut dv = vec![[0.0; 2]; v.len()];
        let mut c = 0;
        for k in 1..=self.ocp.horizon_steps {
            for j in 0..m {
                let w = weights[c] / self.speed_limit;
                dv[k * m + j] = [w * v[k * m + j][0], w * v[k * m + j][1]];
                c += 1;
            }
        }
        for k in 1..=self.ocp.horizon_steps {
            for &(a, b) in &self.pairs {
                let w = weights[c] / self.separation;
                c += 1;
                if w == 0.0 {
                    continue;
                }
                let (qa, qb) = (q[k * m + a], q[k * m + b]);
                let diff = [qa[0] - qb[0], qa[1] - qb[1]];
                dq[k * m + a][0] -= w * diff[0];
                dq[k * m + a][1] -= w * diff[1];
                dq[k * m + b][0] += w * diff[0];
                dq[k * m + b][1] += w * diff[1];
            }
        }
        backward_vehicles(self.ocp, &dq, &dv, grad);
    }
}

/// Outcome of one planning step.
#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub plan: ControlPlan,
    /// Report of the solve whose plan was selected.
    pub report: SolverReport,
    /// Cost of the selected plan under the exact reward model and unperturbed rewards.
    pub exact_cost: f64,
    pub chosen_start: usize,
    /// False when no start reached the feasibility tolerance; the least-violating plan is returned.
    pub feasible: bool,
    pub starts: usize,
    /// Exact cost reached by every start, in start order.
    pub start_costs: Vec<f64>,
    pub wall_time: Duration,
}

fn perturbed(ocp: &OcpProblem, sigma: f64, seed: u64, step: u64, start: usize) -> OcpProblem {
    let mut out = ocp.clone();
    if sigma > 0.0 {
        let mixed = seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (start as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
        let mut rng = ChaCha8Rng::seed_from_u64(mixed);
        let noise = Normal::new(0.0, sigma).expect("sigma validated");
        for r in &mut out.rewards.values {
            *r = (*r + noise.sample(&mut rng)).max(0.0);
        }
    }
    out
}

/// Plans one receding-horizon step.
///
/// `step_index` only feeds the perturbation seed so that successive steps of a
/// closed loop draw independent noise.
pub fn plan_step(
    ocp: &OcpProblem,
    cfg: &PlannerConfig,
    warm: Option<&ControlPlan>,
    step_index: u64,
) -> Result<PlanOutcome> {
    let started = Instant::now();
    ocp.validate()?;
    cfg.validate()?;
    let dim = ocp.control_dim();
    let a_max = ocp.fleet.limits.a_max;
    let x0: Vec<f64> = match warm {
        Some(prev) if cfg.warm_start && prev.steps == ocp.horizon_steps && prev.vehicles == ocp.vehicles() => {
            shift_warm_start(prev)
        }
        _ => vec![0.0; dim],
    };
    let x0: Vec<f64> = x0.into_iter().map(|a| a.clamp(-a_max, a_max)).collect();

    let margin = cfg.solver.feasibility_tol;
    plan_multistart(ocp, cfg, step_index, started, |_, instance| {
        minimize(&PlannerProblem::new(instance, margin).normalized_at(&x0), &x0, &cfg.solver)
    })
}

/// Runs `solve_one` on the nominal problem and on `multistart_count - 1`
/// reward-perturbed copies, then keeps the best start under the exact cost.
pub(crate) fn plan_multistart<F>(
    ocp: &OcpProblem,
    cfg: &PlannerConfig,
    step_index: u64,
    started: Instant,
    solve_one: F,
) -> Result<PlanOutcome>
where
    F: Fn(usize, &OcpProblem) -> Result<SolverReport> + Sync,
{
    let results = run_starts(ocp, cfg, step_index, solve_one)?;
    let chosen = select_start(&results, cfg.solver.feasibility_tol, |r| r.exact_cost);
    finish_outcome(ocp, cfg, results, chosen, started)
}

#[derive(Debug, Clone)]
pub(crate) struct StartResult {
    pub start: usize,
    pub report: SolverReport,
    pub exact_cost: f64,
}

pub(crate) fn run_starts<F>(ocp: &OcpProblem, cfg: &PlannerConfig, step_index: u64, solve_one: F) -> Result<Vec<StartResult>>
where
    F: Fn(usize, &OcpProblem) -> Result<SolverReport> + Sync,
{
    let solve = |start: usize| -> Result<StartResult> {
        let instance = if start == 0 {
            ocp.clone()
        } else {
            perturbed(ocp, cfg.reward_noise_sigma, cfg.seed, step_index, start)
        };
        let report = solve_one(start, &instance)?;
        let exact_cost = exact_cost(ocp, &report.x)?;
        Ok(StartResult { start, report, exact_cost })
    };
    if cfg.multistart_count > 1 {
        (0..cfg.multistart_count).into_par_iter().map(solve).collect()
    } else {
        Ok(vec![solve(0)?])
    }
}

/// Index of the feasible start with the smallest `key`, or of the least
/// violated start when none is feasible. Ties go to the lower start index.
pub(crate) fn select_start<K>(results: &[StartResult], tol: f64, key: K) -> usize
where
    K: Fn(&StartResult) -> f64,
{
    let feasible = results.iter().any(|r| r.report.max_violation <= tol);
    (0..results.len())
        .filter(|&i| !feasible || results[i].report.max_violation <= tol)
        .min_by(|&a, &b| {
            let k = |i: usize| if feasible { key(&results[i]) } else { results[i].report.max_violation };
            k(a).total_cmp(&k(b)).then(results[a].start.cmp(&results[b].start))
        })
        .expect("at least one start")
}

pub(crate) fn finish_outcome(
    ocp: &OcpProblem,
    cfg: &PlannerConfig,
    mut results: Vec<StartResult>,
    chosen: usize,
    started: Instant,
) -> Result<PlanOutcome> {
    let feasible = results.iter().any(|r| r.report.max_violation <= cfg.solver.feasibility_tol);
    let start_costs = results.iter().map(|r| r.exact_cost).collect();
    let StartResult { start, report, exact_cost } = results.swap_remove(chosen);
    let predicted = rollout(ocp, &report.x)?;
    Ok(PlanOutcome {
        plan: ControlPlan {
            steps: ocp.horizon_steps,
            vehicles: ocp.vehicles(),
            controls: report.x.clone(),
            predicted: Some(predicted),
        },
        report,
        exact_cost,
        chosen_start: start,
        feasible,
        starts: cfg.multistart_count,
        start_costs,
        wall_time: started.elapsed(),
    })
}
