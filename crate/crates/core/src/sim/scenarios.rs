//! Named scenarios.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::models::{DriftParams, SensorParams};

use super::config::{AxisDrift, FleetSpec, GridSpec, PlannerKind, ScenarioConfig, TargetSpec};

pub const SCENARIO_NAMES: &[&str] = &[
    "exploration",
    "flotsam",
    "grid-sweep(n_p,m)",
    "horizon-sweep(m,N_s)",
    "kop(instance,C_max)",
    "top-compare",
];

/// A library entry: either a closed-loop scenario or a kinematic orienteering run.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Scenario {
    ClosedLoop(ScenarioConfig),
    Kop { instance: PathBuf, c_max: f64 },
}

fn grid(width: usize, height: usize, spacing: f64) -> TargetSpec {
    TargetSpec {
        grid: Some(GridSpec {
            width,
            height: Some(height),
            spacing,
            origin: [0.0, 0.0],
            drift: AxisDrift::default(),
        }),
        points: Vec::new(),
    }
}

/// 20×20 grid at 0.5 m spacing explored by two vehicles.
pub fn exploration() -> ScenarioConfig {
    ScenarioConfig {
        name: "exploration".into(),
        duration_steps: 120,
        sensor: SensorParams { cutoff: 0.5, degree: 4 },
        targets: grid(20, 20, 0.5),
        fleet: FleetSpec {
            count: 2,
            positions: None,
        },
        ..ScenarioConfig::default()
    }
}

/// 3×4 grid at 2 m spacing whose targets oscillate along x.
pub fn flotsam() -> ScenarioConfig {
    let mut targets = grid(3, 4, 2.0);
    if let Some(g) = targets.grid.as_mut() {
        g.drift.x = DriftParams {
            amplitude: 0.5,
            angular_velocity: std::f64::consts::PI / 10.0,
            drift_velocity: 0.0,
        };
    }
    ScenarioConfig {
        name: "flotsam".into(),
        duration_steps: 400,
        horizon_steps: 40,
        sensor: SensorParams { cutoff: 0.5, degree: 8 },
        targets,
        fleet: FleetSpec {
            count: 2,
            positions: Some(vec![[0.0, 0.0], [0.0, 6.0]]),
        },
        ..ScenarioConfig::default()
    }
}

/// Square grid of `n_p` targets at 1 m spacing with `m` vehicles, 300 s.
pub fn grid_sweep(n_p: usize, m: usize) -> Result<ScenarioConfig> {
    let w = (n_p as f64).sqrt().round() as usize;
    if w == 0 || w * w != n_p {
        return Err(Error::param("n_p", format!("{n_p} is not a positive square number")));
    }
    if m == 0 {
        return Err(Error::param("m", "must be >= 1"));
    }
    Ok(ScenarioConfig {
        name: format!("grid-sweep({n_p},{m})"),
        targets: grid(w, w, 1.0),
        fleet: FleetSpec {
            count: m,
            positions: None,
        },
        ..ScenarioConfig::default()
    })
}

/// 10×10 grid with `m` vehicles and horizon `n_s`, 300 s.
pub fn horizon_sweep(m: usize, n_s: usize) -> Result<ScenarioConfig> {
    if n_s == 0 {
        return Err(Error::param("N_s", "must be >= 1"));
    }
    let mut cfg = grid_sweep(100, m)?;
    cfg.name = format!("horizon-sweep({m},{n_s})");
    cfg.horizon_steps = n_s;
    Ok(cfg)
}

/// 10×10 grid, three vehicles, 300 s at `T_s = 0.1 s` with a narrow sensor;
/// the setup on which IMP-DR is compared with the GRASP baselines.
pub fn top_compare() -> ScenarioConfig {
    ScenarioConfig {
        name: "top-compare".into(),
        duration_steps: 3000,
        sample_time: 0.1,
        sensor: SensorParams { cutoff: 0.05, degree: 2 },
        ..ScenarioConfig::default()
    }
}

fn args<'a>(name: &'a str, head: &str) -> Option<Vec<&'a str>> {
    let rest = name.strip_prefix(head)?.strip_prefix('(')?.strip_suffix(')')?;
    Some(rest.split(',').map(str::trim).collect())
}

fn num<T: std::str::FromStr>(name: &str, field: &'static str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::param(field, format!("`{s}` in `{name}` is not a valid number")))
}

/// Looks up a scenario by name, e.g. `flotsam`, `grid-sweep(49,3)` or
/// `kop(data/tsiligirides_2.txt,40)`.
pub fn scenario_library(name: &str) -> Result<Scenario> {
    let name = name.trim();
    let unknown = || Error::UnknownScenario {
        name: name.to_string(),
        valid: SCENARIO_NAMES.join(", "),
    };
    let closed = match name {
        "exploration" => exploration(),
        "flotsam" => flotsam(),
        "top-compare" => top_compare(),
        _ => {
            if let Some(a) = args(name, "grid-sweep") {
                let [n_p, m] = a[..] else { return Err(unknown()) };
                grid_sweep(num(name, "n_p", n_p)?, num(name, "m", m)?)?
            } else if let Some(a) = args(name, "horizon-sweep") {
                let [m, n_s] = a[..] else { return Err(unknown()) };
                horizon_sweep(num(name, "m", m)?, num(name, "N_s", n_s)?)?
            } else if let Some(a) = args(name, "kop") {
                let [path, c_max] = a[..] else { return Err(unknown()) };
                let c_max: f64 = num(name, "C_max", c_max)?;
                if !(c_max > 0.0 && c_max.is_finite()) {
                    return Err(Error::param("C_max", "must be finite and > 0"));
                }
                return Ok(Scenario::Kop {
                    instance: PathBuf::from(path),
                    c_max,
                });
            } else {
                return Err(unknown());
            }
        }
    };
    Ok(Scenario::ClosedLoop(closed))
}

/// The closed-loop scenarios shipped with the library, with the planner each
/// is normally run with.
pub fn bundled_scenarios() -> Vec<ScenarioConfig> {
    let mut out = vec![exploration(), flotsam(), top_compare()];
    out.push(grid_sweep(100, 3).expect("valid"));
    for planner in [PlannerKind::GraspLb, PlannerKind::GraspUb] {
        out.push(ScenarioConfig {
            name: format!("top-compare-{}", planner.as_str()),
            planner,
            ..top_compare()
        });
    }
    out
}
