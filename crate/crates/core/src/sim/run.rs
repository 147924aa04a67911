//! Closed-loop driver: plan, apply one interval, advance the truth models.

use std::collections::VecDeque;
use std::time::Instant;

use crate::baselines::{grasp_plan, sample_move, steps_per_edge, travel_time, GridGraph, TravelModel};
use crate::error::{Error, Result};
use crate::models::{
    eval_reward_step, pairwise_min_distance, reward_step, vehicle_step, FleetState, MotionLimits, RewardVector, Saturation, Target,
    TargetSet, Vec2, VehicleState,
};
use crate::mpc::{plan_step, ControlPlan, CostConfig, OcpProblem, PlannerConfig, StageMode, TerminalMode};

use super::config::{Injection, PlannerKind, ScenarioConfig};

/// How the applied control of a step relates to the planner's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintFlag {
    Ok,
    /// The solver did not reach the feasibility tolerance; its first step was still admissible.
    Infeasible,
    /// The planned acceleration of some vehicle was shortened to respect the speed limit.
    Clipped,
    /// The planned first step would break the separation, so the vehicles braked instead.
    Brake,
}

impl ConstraintFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            ConstraintFlag::Ok => "ok",
            ConstraintFlag::Infeasible => "infeasible",
            ConstraintFlag::Clipped => "clipped",
            ConstraintFlag::Brake => "brake",
        }
    }
}

/// Solver information for a step at which the planner ran.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanRecord {
    pub status: String,
    pub iterations: usize,
    pub solver_ms: f64,
}

/// State at `time`, and the control applied over the following interval.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub vehicles: Vec<VehicleState>,
    /// `None` on the final record.
    pub control: Option<Vec<Vec2>>,
    /// Positions of the targets present at this step.
    pub target_positions: Vec<Vec2>,
    pub r_model: Vec<f64>,
    pub r_eval: Vec<f64>,
    pub plan: Option<PlanRecord>,
    pub constraint_flag: ConstraintFlag,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub scenario: String,
    pub planner: PlannerKind,
    pub seed: u64,
    pub sample_time: f64,
    pub limits: MotionLimits,
    pub warmup_fraction: f64,
    pub vehicles: usize,
    /// Targets present at any point of the run, in order of appearance.
    pub target_columns: usize,
    pub records: Vec<StepRecord>,
    /// Set when the planner failed; the trace stops at the failing step.
    pub failure: Option<String>,
}

impl RunTrace {
    /// Number of applied controls.
    pub fn steps(&self) -> usize {
        self.records.iter().filter(|r| r.control.is_some()).count()
    }
}

struct GraspState {
    graph: GridGraph,
    model: TravelModel,
    horizon: f64,
    per_edge: usize,
    /// Sampled states and accelerations still to execute, per vehicle.
    queues: Vec<VecDeque<(VehicleState, Vec2)>>,
    replans: u64,
}

/// A closed-loop run in progress.
pub struct Simulation {
    cfg: ScenarioConfig,
    planner_cfg: PlannerConfig,
    limits: MotionLimits,
    targets: TargetSet,
    rewards: Vec<f64>,
    eval: Vec<f64>,
    vehicles: Vec<VehicleState>,
    step: usize,
    pending: VecDeque<Injection>,
    last_control: Option<Vec<Vec2>>,
    warm: Option<ControlPlan>,
    /// Remaining first-intervals of the current plan when several are applied per solve.
    held: VecDeque<Vec<Vec2>>,
    grasp: Option<GraspState>,
    records: Vec<StepRecord>,
    failure: Option<String>,
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let (targets, rewards) = cfg.initial_targets();
        let eval = rewards.clone();
        let vehicles = cfg.initial_fleet();
        let limits = cfg.limits();
        let (d, pair) = pairwise_min_distance(&vehicles.iter().map(|s| s.q).collect::<Vec<_>>());
        if cfg.planner == PlannerKind::Impdr && d < limits.d_min - 1e-6 {
            let (a, b) = pair.unwrap_or((0, 0));
            return Err(Error::param(
                "fleet.positions",
                format!("vehicles {a} and {b} start {d} m apart, below d_min = {}", limits.d_min),
            ));
        }
        let mut pending: Vec<Injection> = cfg.injections.clone();
        pending.sort_by_key(|inj| inj.step);
        let grasp = match cfg.planner.travel_model() {
            Some(model) => {
                let graph = cfg.grid_graph().ok_or_else(|| Error::param("targets.grid", "GRASP needs a target grid"))?;
                let edge = travel_time(graph.spacing, model);
                Some(GraspState {
                    per_edge: steps_per_edge(edge, cfg.sample_time),
                    graph,
                    model,
                    horizon: cfg.grasp_horizon(),
                    queues: vec![VecDeque::new(); vehicles.len()],
                    replans: 0,
                })
            }
            None => None,
        };
        Ok(Simulation {
            planner_cfg: cfg.planner_config(),
            cfg: cfg.clone(),
            limits,
            targets,
            rewards,
            eval,
            vehicles,
            step: 0,
            pending: pending.into(),
            last_control: None,
            warm: None,
            held: VecDeque::new(),
            grasp,
            records: Vec::new(),
            failure: None,
        })
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.cfg.sample_time
    }

    pub fn is_finished(&self) -> bool {
        self.failure.is_some() || self.step >= self.cfg.duration_steps
    }

    pub fn vehicles(&self) -> &[VehicleState] {
        &self.vehicles
    }

    pub fn targets(&self) -> &TargetSet {
        &self.targets
    }

    pub fn model_rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn eval_rewards(&self) -> &[f64] {
        &self.eval
    }

    /// Adds a target at the current step. The planner sees it from this step on.
    pub fn inject_target(&mut self, target: Target, r_init: f64) -> Result<()> {
        if !(r_init >= 0.0 && r_init.is_finite()) {
            return Err(Error::param("r_init", "must be finite and >= 0"));
        }
        target.drift[0].validate()?;
        target.drift[1].validate()?;
        if self.grasp.is_some() {
            return Err(Error::InvalidInput("GRASP planners do not support injected targets".into()));
        }
        self.targets.push(target);
        self.rewards.push(r_init);
        self.eval.push(r_init);
        Ok(())
    }

    /// Advances one sampling period. Returns `false` once the run is over.
    pub fn step(&mut self) -> Result<bool> {
        if self.is_finished() {
            return Ok(false);
        }
        while self.pending.front().is_some_and(|inj| inj.step <= self.step) {
            let inj = self.pending.pop_front().expect("front exists");
            self.inject_target(
                Target {
                    base: [inj.x, inj.y],
                    drift: [inj.drift.x, inj.drift.y],
                },
                inj.reward,
            )?;
        }
        let t = self.time();
        let positions = self.targets.targets.iter().map(|p| p.position_at(t)).collect::<Vec<_>>();
        let decision = match self.cfg.planner {
            PlannerKind::Impdr => self.decide_impdr(),
            PlannerKind::Static => Ok(Decision {
                next: self.vehicles.iter().map(|s| vehicle_step(s, [0.0, 0.0], self.cfg.sample_time)).collect(),
                control: vec![[0.0, 0.0]; self.vehicles.len()],
                plan: None,
                flag: ConstraintFlag::Ok,
            }),
            PlannerKind::GraspLb | PlannerKind::GraspUb => self.decide_grasp(),
        };
        let decision = match decision {
            Ok(d) => d,
            Err(e) => {
                self.records.push(self.record(positions, None, None, ConstraintFlag::Ok));
                self.failure = Some(format!("step {}: {e}", self.step));
                return Ok(false);
            }
        };
        self.records
            .push(self.record(positions.clone(), Some(decision.control.clone()), decision.plan, decision.flag));

        let q: Vec<Vec2> = self.vehicles.iter().map(|s| s.q).collect();
        let r = RewardVector {
            values: std::mem::take(&mut self.rewards),
            k_gain: self.cfg.k_gain,
        };
        self.rewards = reward_step(&r, &positions, &q, &self.cfg.sensor, self.cfg.sample_time)?.values;
        let e = RewardVector {
            values: std::mem::take(&mut self.eval),
            k_gain: self.cfg.k_gain,
        };
        self.eval = eval_reward_step(&e, &positions, &q, self.cfg.eval_radius(), self.cfg.sample_time)?.values;
        self.vehicles = decision.next;
        self.last_control = Some(decision.control);
        self.step += 1;
        if self.step == self.cfg.duration_steps {
            let t = self.time();
            let positions = self.targets.targets.iter().map(|p| p.position_at(t)).collect();
            self.records.push(self.record(positions, None, None, ConstraintFlag::Ok));
        }
        Ok(!self.is_finished())
    }

    fn record(&self, target_positions: Vec<Vec2>, control: Option<Vec<Vec2>>, plan: Option<PlanRecord>, flag: ConstraintFlag) -> StepRecord {
        StepRecord {
            step: self.step,
            time: self.time(),
            vehicles: self.vehicles.clone(),
            control,
            target_positions,
            r_model: self.rewards.clone(),
            r_eval: self.eval.clone(),
            plan,
            constraint_flag: flag,
        }
    }

    fn build_ocp(&self) -> OcpProblem {
        let n_s = self.cfg.horizon_steps;
        let t0 = self.time();
        let target_trajectory = (0..=n_s)
            .map(|i| {
                let t = t0 + i as f64 * self.cfg.sample_time;
                self.targets.targets.iter().map(|p| p.position_at(t)).collect()
            })
            .collect();
        OcpProblem {
            horizon_steps: n_s,
            sample_time: self.cfg.sample_time,
            fleet: FleetState {
                vehicles: self.vehicles.clone(),
                limits: self.limits,
            },
            rewards: RewardVector {
                values: self.rewards.clone(),
                k_gain: self.cfg.k_gain,
            },
            target_trajectory,
            sensor: self.cfg.sensor,
            cost: CostConfig {
                stage: StageMode::Squared,
                terminal: TerminalMode::SameAsStage,
                input_penalty: self.cfg.mpc.input_penalty,
            },
            previous_control: self.last_control.clone(),
            saturation: Saturation::DEFAULT_SMOOTH,
        }
    }

    fn decide_impdr(&mut self) -> Result<Decision> {
        let (control, plan, mut flag) = if let Some(held) = self.held.pop_front() {
            let plan = PlanRecord {
                status: "held".into(),
                iterations: 0,
                solver_ms: 0.0,
            };
            (held, Some(plan), ConstraintFlag::Ok)
        } else {
            let ocp = self.build_ocp();
            let outcome = plan_step(&ocp, &self.planner_cfg, self.warm.as_ref(), self.step as u64)?;
            let hold = self.cfg.steps_per_plan;
            for k in 1..hold {
                self.held
                    .push_back((0..ocp.vehicles()).map(|j| outcome.plan.control(k, j)).collect());
            }
            let mut warm = outcome.plan.clone();
            for _ in 1..hold {
                warm.controls = crate::mpc::shift_warm_start(&warm);
            }
            self.warm = Some(warm);
            let flag = if outcome.feasible {
                ConstraintFlag::Ok
            } else {
                ConstraintFlag::Infeasible
            };
            let plan = PlanRecord {
                status: outcome.report.status.as_str().into(),
                iterations: outcome.report.iterations,
                solver_ms: outcome.wall_time.as_secs_f64() * 1e3,
            };
            (outcome.plan.first(), Some(plan), flag)
        };
        let a_max = self.limits.a_max;
        let mut control: Vec<Vec2> = control.iter().map(|a| [a[0].clamp(-a_max, a_max), a[1].clamp(-a_max, a_max)]).collect();
        if self.clip_to_speed_limit(&mut control) {
            flag = ConstraintFlag::Clipped;
        }
        let mut next = self.advance(&control);
        if !self.separated(&next) {
            control = self
                .vehicles
                .iter()
                .map(|s| {
                    [
                        (-s.v[0] / self.cfg.sample_time).clamp(-a_max, a_max),
                        (-s.v[1] / self.cfg.sample_time).clamp(-a_max, a_max),
                    ]
                })
                .collect();
            next = self.advance(&control);
            flag = ConstraintFlag::Brake;
            self.held.clear();
            self.warm = None;
        }
        Ok(Decision { next, control, plan, flag })
    }

    fn advance(&self, control: &[Vec2]) -> Vec<VehicleState> {
        self.vehicles
            .iter()
            .zip(control)
            .map(|(s, a)| vehicle_step(s, *a, self.cfg.sample_time))
            .collect()
    }

    /// Shortens each acceleration along its own direction so that the next
    /// speed stays within `v_max`. Returns whether anything changed.
    fn clip_to_speed_limit(&self, control: &mut [Vec2]) -> bool {
        let t = self.cfg.sample_time;
        let v_max = self.limits.v_max;
        let mut clipped = false;
        for (s, a) in self.vehicles.iter().zip(control.iter_mut()) {
            let next = [s.v[0] + a[0] * t, s.v[1] + a[1] * t];
            if next[0].hypot(next[1]) <= v_max {
                continue;
            }
            // Largest alpha in [0, 1] with |v + alpha a t| <= v_max.
            let (p, w) = (s.v, [a[0] * t, a[1] * t]);
            let qa = w[0] * w[0] + w[1] * w[1];
            let qb = p[0] * w[0] + p[1] * w[1];
            let qc = p[0] * p[0] + p[1] * p[1] - v_max * v_max;
            let alpha = if qc >= 0.0 {
                0.0
            } else {
                let mut alpha = ((-qb + (qb * qb - qa * qc).max(0.0).sqrt()) / qa).clamp(0.0, 1.0);
                while alpha > 0.0 && (p[0] + alpha * w[0]).hypot(p[1] + alpha * w[1]) > v_max {
                    alpha = (alpha * (1.0 - 1e-12) - f64::MIN_POSITIVE).max(0.0);
                }
                alpha
            };
            *a = [a[0] * alpha, a[1] * alpha];
            clipped = true;
        }
        clipped
    }

    fn separated(&self, next: &[VehicleState]) -> bool {
        let (d, _) = pairwise_min_distance(&next.iter().map(|s| s.q).collect::<Vec<_>>());
        d >= self.limits.d_min - 1e-6
    }

    fn decide_grasp(&mut self) -> Result<Decision> {
        let sample_time = self.cfg.sample_time;
        let k_gain = self.cfg.k_gain;
        let seed = self.cfg.seed;
        let grasp_cfg = self.cfg.grasp.config.clone();
        let rewards = self.rewards.clone();
        let vehicles = self.vehicles.clone();
        let g = self.grasp.as_mut().expect("grasp state exists for grasp planners");
        let mut plan_record = None;
        if g.queues.iter().all(|q| q.is_empty()) {
            let started = Instant::now();
            let starts: Vec<usize> = vehicles.iter().map(|s| g.graph.nearest_node(s.q)).collect();
            let off_node = vehicles.iter().zip(&starts).any(|(s, &n)| s.q != g.graph.position(n));
            let mut iterations = 0;
            if off_node {
                // Reach the grid first; planning starts from the nodes.
                let longest = vehicles
                    .iter()
                    .zip(&starts)
                    .map(|(s, &n)| {
                        let p = g.graph.position(n);
                        travel_time(((s.q[0] - p[0]).powi(2) + (s.q[1] - p[1]).powi(2)).sqrt(), g.model)
                    })
                    .fold(0.0, f64::max);
                let steps = ((longest / sample_time) - 1e-9).ceil().max(1.0) as usize;
                for (j, s) in vehicles.iter().enumerate() {
                    g.queues[j].extend(sample_move(s.q, g.graph.position(starts[j]), g.model, sample_time, steps));
                }
            } else {
                let reward_vec = RewardVector {
                    values: rewards,
                    k_gain,
                };
                let step_seed = seed ^ g.replans.wrapping_mul(0x9E37_79B9_7F4A_7C15);
                let (plan, history) = grasp_plan(&g.graph, g.model, &reward_vec, &starts, g.horizon, &grasp_cfg, step_seed)?;
                g.replans += 1;
                iterations = history.len();
                // Execute one edge of every route, then plan again from the new nodes.
                for (j, route) in plan.routes.iter().enumerate() {
                    let from = g.graph.position(starts[j]);
                    let to = route.next_node().map_or(from, |n| g.graph.position(n));
                    g.queues[j].extend(sample_move(from, to, g.model, sample_time, g.per_edge));
                }
            }
            plan_record = Some(PlanRecord {
                status: if off_node { "approach".into() } else { "grasp".into() },
                iterations,
                solver_ms: started.elapsed().as_secs_f64() * 1e3,
            });
        }
        let mut next = Vec::with_capacity(vehicles.len());
        let mut control = Vec::with_capacity(vehicles.len());
        for q in &mut g.queues {
            let (s, a) = q.pop_front().expect("queues are refilled together");
            next.push(s);
            control.push(a);
        }
        Ok(Decision {
            next,
            control,
            plan: plan_record,
            flag: ConstraintFlag::Ok,
        })
    }

    pub fn finish(mut self) -> RunTrace {
        if self.records.is_empty() {
            let positions = self.targets.targets.iter().map(|p| p.position_at(0.0)).collect();
            self.records.push(self.record(positions, None, None, ConstraintFlag::Ok));
        }
        RunTrace {
            scenario: self.cfg.name.clone(),
            planner: self.cfg.planner,
            seed: self.cfg.seed,
            sample_time: self.cfg.sample_time,
            limits: self.limits,
            warmup_fraction: self.cfg.warmup_fraction,
            vehicles: self.vehicles.len(),
            target_columns: self.targets.len(),
            records: self.records,
            failure: self.failure,
        }
    }
}

struct Decision {
    next: Vec<VehicleState>,
    control: Vec<Vec2>,
    plan: Option<PlanRecord>,
    flag: ConstraintFlag,
}

/// Runs a scenario to completion. Planner failures end the trace early and
/// are reported in [`RunTrace::failure`].
pub fn run_closed_loop(cfg: &ScenarioConfig) -> Result<RunTrace> {
    run_closed_loop_with(cfg, |_| {})
}

/// As [`run_closed_loop`], calling `progress` after every step.
pub fn run_closed_loop_with(cfg: &ScenarioConfig, mut progress: impl FnMut(&Simulation)) -> Result<RunTrace> {
    let mut sim = Simulation::new(cfg)?;
    while sim.step()? {
        progress(&sim);
    }
    progress(&sim);
    Ok(sim.finish())
}
