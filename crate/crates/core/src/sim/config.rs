//! Declarative scenario description, read from TOML.
//!
//! Every key has a default equal to the computational-evaluation setup
//! (10×10 grid, 1 m spacing, k_gain = 1/s, r_0 = 10, v_max = 1 m/s,
//! a_max = 2 m/s², c_b = 0.25, n_b = 8, T_s = 0.25 s, N_s = 20, 1200 steps).
//!
//! ```toml
//! name = "custom"
//! duration_steps = 400
//! planner = "impdr"
//!
//! [sensor]
//! cutoff = 0.5
//! degree = 8
//!
//! [targets.grid]
//! width = 3
//! height = 4
//! spacing = 2.0
//! drift.x = { amplitude = 0.5, angular_velocity = 0.3141592653589793 }
//!
//! [fleet]
//! count = 2
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{GraspConfig, GridGraph, TravelModel};
use crate::error::{Error, Result};
use crate::models::{DriftParams, MotionLimits, SensorParams, Target, TargetSet, Vec2, VehicleState};
use crate::mpc::{CostConfig, PlannerConfig};
use crate::nlp::SolverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlannerKind {
    Impdr,
    GraspLb,
    GraspUb,
    /// Vehicles never move.
    Static,
}

impl PlannerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PlannerKind::Impdr => "impdr",
            PlannerKind::GraspLb => "grasp-lb",
            PlannerKind::GraspUb => "grasp-ub",
            PlannerKind::Static => "static",
        }
    }

    pub fn travel_model(self) -> Option<TravelModel> {
        match self {
            PlannerKind::GraspLb => Some(TravelModel::LowerBound),
            PlannerKind::GraspUb => Some(TravelModel::UpperBound),
            _ => None,
        }
    }
}

impl std::str::FromStr for PlannerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "impdr" => Ok(PlannerKind::Impdr),
            "grasp-lb" => Ok(PlannerKind::GraspLb),
            "grasp-ub" => Ok(PlannerKind::GraspUb),
            "static" => Ok(PlannerKind::Static),
            other => Err(Error::param(
                "planner",
                format!("`{other}` is not one of impdr, grasp-lb, grasp-ub, static"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisDrift {
    #[serde(default)]
    pub x: DriftParams,
    #[serde(default)]
    pub y: DriftParams,
}

impl AxisDrift {
    fn pair(&self) -> [DriftParams; 2] {
        [self.x, self.y]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub width: usize,
    /// Defaults to `width`.
    #[serde(default)]
    pub height: Option<usize>,
    #[serde(default = "one")]
    pub spacing: f64,
    #[serde(default)]
    pub origin: Vec2,
    #[serde(default)]
    pub drift: AxisDrift,
}

fn one() -> f64 {
    1.0
}

impl GridSpec {
    pub fn height(&self) -> usize {
        self.height.unwrap_or(self.width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointSpec {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub drift: AxisDrift,
    /// Initial reward; defaults to the scenario's `initial_reward`.
    #[serde(default)]
    pub reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    #[serde(default)]
    pub grid: Option<GridSpec>,
    /// Extra targets appended after the grid.
    #[serde(default)]
    pub points: Vec<PointSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetSpec {
    #[serde(default = "default_count")]
    pub count: usize,
    /// Explicit start positions; otherwise spread along the lower edge of
    /// the target area.
    #[serde(default)]
    pub positions: Option<Vec<Vec2>>,
}

fn default_count() -> usize {
    3
}

impl Default for FleetSpec {
    fn default() -> Self {
        FleetSpec {
            count: default_count(),
            positions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitSpec {
    pub v_max: f64,
    pub a_max: f64,
    /// Defaults to twice the sensor cutoff.
    pub d_min: Option<f64>,
}

impl Default for LimitSpec {
    fn default() -> Self {
        LimitSpec {
            v_max: 1.0,
            a_max: 2.0,
            d_min: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    pub convergence_tol: f64,
    pub relative_tol: bool,
    pub feasibility_tol: f64,
    pub memory: usize,
    /// Looser tolerance for the first subproblems, tightened tenfold per outer iteration.
    pub initial_inner_tol: Option<f64>,
    pub relative_decrease_tol: f64,
    /// Wall-clock cap per planning step in milliseconds. Runs with a cap are
    /// not reproducible.
    pub wall_cap_ms: Option<u64>,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let d = SolverConfig::default();
        SolverSpec {
            max_outer_iters: 5,
            max_inner_iters: 200,
            convergence_tol: d.convergence_tol,
            relative_tol: false,
            feasibility_tol: d.feasibility_tol,
            memory: d.memory,
            initial_inner_tol: None,
            relative_decrease_tol: 0.0,
            wall_cap_ms: None,
        }
    }
}

impl SolverSpec {
    pub fn to_config(&self) -> SolverConfig {
        SolverConfig {
            max_outer_iters: self.max_outer_iters,
            max_inner_iters: self.max_inner_iters,
            convergence_tol: self.convergence_tol,
            relative_tol: self.relative_tol,
            feasibility_tol: self.feasibility_tol,
            memory: self.memory,
            initial_inner_tol: self.initial_inner_tol,
            relative_decrease_tol: self.relative_decrease_tol,
            wall_clock_cap: self.wall_cap_ms.map(std::time::Duration::from_millis),
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcSpec {
    pub multistart_count: usize,
    pub reward_noise_sigma: f64,
    pub warm_start: bool,
    pub input_penalty: f64,
    pub solver: SolverSpec,
}

impl Default for MpcSpec {
    fn default() -> Self {
        MpcSpec {
            multistart_count: 1,
            reward_noise_sigma: 0.0,
            warm_start: true,
            input_penalty: CostConfig::default().input_penalty,
            solver: SolverSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraspSpec {
    #[serde(flatten)]
    pub config: GraspConfig,
    /// Planning horizon in seconds. Defaults to `horizon_steps` edges at
    /// cruise speed, doubled for the upper-bound model.
    pub horizon_s: Option<f64>,
}

/// A target that appears during the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Injection {
    pub step: usize,
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub reward: f64,
    #[serde(default)]
    pub drift: AxisDrift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub planner: PlannerKind,
    pub duration_steps: usize,
    pub sample_time: f64,
    pub horizon_steps: usize,
    /// Plan intervals applied per solve; 1 replans every sampling period.
    pub steps_per_plan: usize,
    pub k_gain: f64,
    pub initial_reward: f64,
    /// Evaluation radius; defaults to the sensor cutoff.
    pub eval_radius: Option<f64>,
    /// Fraction of the steps excluded from the steady-state average.
    pub warmup_fraction: f64,
    pub sensor: SensorParams,
    pub limits: LimitSpec,
    pub targets: TargetSpec,
    pub fleet: FleetSpec,
    pub mpc: MpcSpec,
    pub grasp: GraspSpec,
    pub injections: Vec<Injection>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "default".into(),
            seed: 0,
            planner: PlannerKind::Impdr,
            duration_steps: 1200,
            sample_time: 0.25,
            horizon_steps: 20,
            steps_per_plan: 1,
            k_gain: 1.0,
            initial_reward: 10.0,
            eval_radius: None,
            warmup_fraction: 0.1,
            sensor: SensorParams {
                cutoff: 0.25,
                degree: 8,
            },
            limits: LimitSpec::default(),
            targets: TargetSpec {
                grid: Some(GridSpec {
                    width: 10,
                    height: None,
                    spacing: 1.0,
                    origin: [0.0, 0.0],
                    drift: AxisDrift::default(),
                }),
                points: Vec::new(),
            },
            fleet: FleetSpec::default(),
            mpc: MpcSpec::default(),
            grasp: GraspSpec::default(),
            injections: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(source: &str, text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config {
            path: source.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|e| Error::Config {
            path: source.to_string(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            message: format!("cannot read file: {e}"),
        })?;
        ScenarioConfig::from_toml_str(&path.display().to_string(), &text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config is always serializable")
    }

    pub fn eval_radius(&self) -> f64 {
        self.eval_radius.unwrap_or(self.sensor.cutoff)
    }

    pub fn limits(&self) -> MotionLimits {
        MotionLimits {
            v_max: self.limits.v_max,
            a_max: self.limits.a_max,
            d_min: self.limits.d_min.unwrap_or(2.0 * self.sensor.cutoff),
        }
    }

    /// Targets present from the start, grid first (row-major), then points.
    pub fn initial_targets(&self) -> (TargetSet, Vec<f64>) {
        let mut targets = Vec::new();
        let mut rewards = Vec::new();
        if let Some(g) = &self.targets.grid {
            for row in 0..g.height() {
                for col in 0..g.width {
                    targets.push(Target {
                        base: [
                            g.origin[0] + col as f64 * g.spacing,
                            g.origin[1] + row as f64 * g.spacing,
                        ],
                        drift: g.drift.pair(),
                    });
                    rewards.push(self.initial_reward);
                }
            }
        }
        for p in &self.targets.points {
            targets.push(Target {
                base: [p.x, p.y],
                drift: p.drift.pair(),
            });
            rewards.push(p.reward.unwrap_or(self.initial_reward));
        }
        (TargetSet::new(targets), rewards)
    }

    /// Grid graph for the baselines, when the targets form a plain grid.
    pub fn grid_graph(&self) -> Option<GridGraph> {
        let g = self.targets.grid.as_ref()?;
        GridGraph::new(g.width, g.height(), g.spacing, g.origin).ok()
    }

    pub fn initial_fleet(&self) -> Vec<VehicleState> {
        if let Some(ps) = &self.fleet.positions {
            return ps.iter().map(|p| VehicleState::at(p[0], p[1])).collect();
        }
        let (targets, _) = self.initial_targets();
        let pts: Vec<Vec2> = targets.targets.iter().map(|t| t.base).collect();
        let (x0, x1, y0) = if pts.is_empty() {
            (0.0, 0.0, 0.0)
        } else {
            let x0 = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let x1 = pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            let y0 = pts.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
            (x0, x1, y0)
        };
        let m = self.fleet.count;
        (0..m)
            .map(|j| VehicleState::at(x0 + (x1 - x0) * (j as f64 + 0.5) / m as f64, y0))
            .collect()
    }

    pub fn planner_config(&self) -> PlannerConfig {
        PlannerConfig {
            multistart_count: self.mpc.multistart_count,
            reward_noise_sigma: self.mpc.reward_noise_sigma,
            warm_start: self.mpc.warm_start,
            solver: self.mpc.solver.to_config(),
            seed: self.seed,
        }
    }

    pub fn grasp_horizon(&self) -> f64 {
        if let Some(h) = self.grasp.horizon_s {
            return h;
        }
        let spacing = self.targets.grid.as_ref().map_or(1.0, |g| g.spacing);
        let base = self.horizon_steps as f64 * spacing / crate::baselines::BASELINE_SPEED;
        match self.planner {
            PlannerKind::GraspUb => 2.0 * base,
            _ => base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.duration_steps == 0 {
            return Err(Error::param("duration_steps", "must be >= 1"));
        }
        if !(self.sample_time > 0.0 && self.sample_time.is_finite()) {
            return Err(Error::param("sample_time", "must be finite and > 0"));
        }
        if self.horizon_steps == 0 {
            return Err(Error::param("horizon_steps", "must be >= 1"));
        }
        if self.steps_per_plan == 0 || self.steps_per_plan > self.horizon_steps {
            return Err(Error::param("steps_per_plan", "must lie in 1..=horizon_steps"));
        }
        if !(self.k_gain >= 0.0 && self.k_gain.is_finite()) {
            return Err(Error::param("k_gain", "must be finite and >= 0"));
        }
        if !(self.initial_reward >= 0.0 && self.initial_reward.is_finite()) {
            return Err(Error::param("initial_reward", "must be finite and >= 0"));
        }
        if !(self.eval_radius() > 0.0 && self.eval_radius().is_finite()) {
            return Err(Error::param("eval_radius", "must be finite and > 0"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::param("warmup_fraction", "must lie in [0, 1)"));
        }
        self.sensor.validate()?;
        self.limits().validate()?;
        if let Some(g) = &self.targets.grid {
            if g.width == 0 || g.height() == 0 {
                return Err(Error::param("targets.grid", "width and height must be >= 1"));
            }
            if !(g.spacing > 0.0 && g.spacing.is_finite()) {
                return Err(Error::param("targets.grid.spacing", "must be finite and > 0"));
            }
            g.drift.x.validate()?;
            g.drift.y.validate()?;
        }
        for p in &self.targets.points {
            p.drift.x.validate()?;
            p.drift.y.validate()?;
            if !(p.x.is_finite() && p.y.is_finite()) || p.reward.is_some_and(|r| !(r >= 0.0 && r.is_finite())) {
                return Err(Error::param("targets.points", "coordinates and rewards must be finite, rewards >= 0"));
            }
        }
        let (targets, _) = self.initial_targets();
        if targets.is_empty() && self.injections.is_empty() {
            return Err(Error::param("targets", "scenario has no targets"));
        }
        if self.fleet.count == 0 {
            return Err(Error::param("fleet.count", "must be >= 1"));
        }
        if let Some(ps) = &self.fleet.positions {
            if ps.len() != self.fleet.count {
                return Err(Error::param(
                    "fleet.positions",
                    format!("{} positions for {} vehicles", ps.len(), self.fleet.count),
                ));
            }
        }
        for inj in &self.injections {
            if inj.step >= self.duration_steps {
                return Err(Error::param("injections.step", "must be before the end of the run"));
            }
            if !(inj.reward >= 0.0 && inj.reward.is_finite()) {
                return Err(Error::param("injections.reward", "must be finite and >= 0"));
            }
            inj.drift.x.validate()?;
            inj.drift.y.validate()?;
        }
        self.planner_config().validate()?;
        if self.planner_config().solver.wall_clock_cap.is_some() && self.mpc.solver.wall_cap_ms == Some(0) {
            return Err(Error::param("mpc.solver.wall_cap_ms", "must be > 0"));
        }
        if let Some(model) = self.planner.travel_model() {
            self.grasp.config.validate()?;
            let plain_grid = self.targets.grid.as_ref().is_some_and(|g| {
                g.drift.x.is_static() && g.drift.y.is_static()
            }) && self.targets.points.is_empty()
                && self.injections.is_empty();
            if !plain_grid {
                return Err(Error::param(
                    "planner",
                    format!("{} needs a static target grid without extra points or injections", self.planner.as_str()),
                ));
            }
            let _ = model;
            if !(self.grasp_horizon() > 0.0 && self.grasp_horizon().is_finite()) {
                return Err(Error::param("grasp.horizon_s", "must be finite and > 0"));
            }
        }
        Ok(())
    }
}
