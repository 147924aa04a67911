//! Seeded random planning instances for derivative checks and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ocp::{cost_and_gradient, CostConfig, OcpProblem, StageMode, TerminalMode};
use crate::models::{DriftParams, FleetState, MotionLimits, RewardVector, Saturation, SensorParams, Target, VehicleState};
use crate::nlp::{gradient_errors, FnProblem};

/// Random instance with `vehicles` vehicles, `targets` drifting targets and
/// horizon `horizon_steps`, plus a random control vector within the box.
pub fn random_problem(seed: u64, vehicles: usize, targets: usize, horizon_steps: usize) -> (OcpProblem, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limits = MotionLimits {
        v_max: 1.0,
        a_max: 2.0,
        d_min: 0.3,
    };
    let mut fleet = Vec::with_capacity(vehicles);
    while fleet.len() < vehicles {
        let q = [rng.random_range(0.0..3.0), rng.random_range(0.0..3.0)];
        let clear = fleet
            .iter()
            .all(|s: &VehicleState| ((s.q[0] - q[0]).powi(2) + (s.q[1] - q[1]).powi(2)).sqrt() > 2.0 * limits.d_min);
        if clear {
            fleet.push(VehicleState {
                q,
                v: [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)],
            });
        }
    }
    let sample_time = 0.25;
    let set: Vec<Target> = (0..targets)
        .map(|_| {
            let drift = DriftParams {
                amplitude: rng.random_range(0.0..0.5),
                angular_velocity: rng.random_range(0.0..1.0),
                drift_velocity: rng.random_range(-0.1..0.1),
            };
            Target {
                base: [rng.random_range(0.0..3.0), rng.random_range(0.0..3.0)],
                drift: [drift, DriftParams::default()],
            }
        })
        .collect();
    let target_trajectory = (0..=horizon_steps)
        .map(|k| set.iter().map(|t| t.position_at(k as f64 * sample_time)).collect())
        .collect();
    let degrees = [2, 4, 8];
    let ocp = OcpProblem {
        horizon_steps,
        sample_time,
        fleet: FleetState {
            vehicles: fleet,
            limits,
        },
        rewards: RewardVector {
            values: (0..targets).map(|_| rng.random_range(0.0..20.0)).collect(),
            k_gain: 1.0,
        },
        target_trajectory,
        sensor: SensorParams {
            cutoff: rng.random_range(0.3..0.8),
            degree: degrees[rng.random_range(0..degrees.len())],
        },
        cost: CostConfig {
            stage: StageMode::Squared,
            terminal: TerminalMode::SameAsStage,
            input_penalty: 1e-3,
        },
        previous_control: Some((0..vehicles).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect()),
        saturation: Saturation::DEFAULT_SMOOTH,
    };
    let controls = (0..ocp.control_dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
    (ocp, controls)
}

/// Largest relative error of the reverse-mode cost gradient against
/// fourth-order central differences at `controls`. Each component is judged
/// at its best step among 3e-2 … 1e-4: large steps lose to truncation near a
/// sharp footprint, small ones to round-off in large costs.
pub fn gradient_error(ocp: &OcpProblem, controls: &[f64]) -> f64 {
    let owned = ocp.clone();
    let p = FnProblem::new(ocp.control_dim(), move |u: &[f64]| {
        cost_and_gradient(&owned, u).unwrap_or_else(|_| (f64::NAN, vec![f64::NAN; u.len()]))
    });
    let mut best = vec![f64::INFINITY; controls.len()];
    for h in [3e-2, 1e-2, 3e-3, 1e-3, 1e-4] {
        for (b, e) in best.iter_mut().zip(gradient_errors(&p, controls, h)) {
            *b = b.min(e);
        }
    }
    best.into_iter().fold(0.0, f64::max)
}
