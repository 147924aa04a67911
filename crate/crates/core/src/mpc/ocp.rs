//! Single-shooting transcription of the receding-horizon monitoring problem.
//!
//! Decision variables are the accelerations of every vehicle at every step,
//! flattened as `u[(k * m + j) * 2 + axis]`. States are eliminated by forward
//! simulation, and the gradient is obtained by one reverse sweep through the
//! same discrete dynamics.

use crate::error::{Error, Result};
use crate::models::{butterworth_2d, butterworth_2d_grad, pairwise_min_distance, FleetState, RewardVector, Saturation, SensorParams, Vec2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StageMode {
    /// `Σ r_i²`
    Squared,
    /// `Σ r_i`
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TerminalMode {
    /// Terminal cost is the stage cost of the final reward state.
    SameAsStage,
    /// `weight * Σ_j |q_j - target|²`, a soft end-point constraint.
    EndpointSoft { weight: f64, target: Vec2 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostConfig {
    pub stage: StageMode,
    pub terminal: TerminalMode,
    /// Weight `k_R` of the squared input change.
    pub input_penalty: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            stage: StageMode::Squared,
            terminal: TerminalMode::SameAsStage,
            input_penalty: 1e-3,
        }
    }
}

/// One planning instance over `horizon_steps` sampling periods.
#[derive(Debug, Clone)]
pub struct OcpProblem {
    pub horizon_steps: usize,
    pub sample_time: f64,
    pub fleet: FleetState,
    pub rewards: RewardVector,
    /// Target positions at steps `0..=horizon_steps`.
    pub target_trajectory: Vec<Vec<Vec2>>,
    pub sensor: SensorParams,
    pub cost: CostConfig,
    /// Control applied in the previous sampling period, one per vehicle.
    /// `None` means the input change at step 0 is measured from zero.
    pub previous_control: Option<Vec<Vec2>>,
    /// Saturation used for the planner's predictions and gradients.
    pub saturation: Saturation,
}

impl OcpProblem {
    pub fn vehicles(&self) -> usize {
        self.fleet.vehicles.len()
    }

    pub fn targets(&self) -> usize {
        self.rewards.values.len()
    }

    /// Length of the flattened control vector.
    pub fn control_dim(&self) -> usize {
        self.horizon_steps * self.vehicles() * 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon_steps == 0 {
            return Err(Error::param("horizon_steps", "must be >= 1"));
        }
        if !(self.sample_time > 0.0 && self.sample_time.is_finite()) {
            return Err(Error::param("sample_time", "must be finite and > 0"));
        }
        if self.fleet.vehicles.is_empty() {
            return Err(Error::InvalidInput("fleet has no vehicles".into()));
        }
        self.sensor.validate()?;
        self.fleet.limits.validate()?;
        if self.target_trajectory.len() != self.horizon_steps + 1 {
            return Err(Error::Contract(format!(
                "target trajectory has {} steps, expected {}",
                self.target_trajectory.len(),
                self.horizon_steps + 1
            )));
        }
        let n = self.targets();
        if let Some(k) = self.target_trajectory.iter().position(|row| row.len() != n) {
            return Err(Error::Contract(format!(
                "target trajectory step {k} has {} positions for {n} rewards",
                self.target_trajectory[k].len()
            )));
        }
        if self.rewards.values.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::InvalidInput("rewards must be finite and non-negative".into()));
        }
        if let Some(prev) = &self.previous_control {
            if prev.len() != self.vehicles() {
                return Err(Error::Contract("previous control must have one entry per vehicle".into()));
            }
        }
        let (d, pair) = pairwise_min_distance(&self.fleet.positions());
        if d < self.fleet.limits.d_min - 1e-6 {
            let (a, b) = pair.unwrap_or((0, 0));
            return Err(Error::InvalidInput(format!(
                "vehicles {a} and {b} are {d:.6} m apart, below d_min = {}",
                self.fleet.limits.d_min
            )));
        }
        Ok(())
    }

    fn check_shape(&self, controls: &[f64]) -> Result<()> {
        if controls.len() != self.control_dim() {
            return Err(Error::Contract(format!(
                "control vector has {} entries, expected {} (steps {} x vehicles {} x 2)",
                controls.len(),
                self.control_dim(),
                self.horizon_steps,
                self.vehicles()
            )));
        }
        Ok(())
    }
}

/// Predicted trajectory over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub steps: usize,
    pub vehicles: usize,
    pub targets: usize,
    /// `positions[k * vehicles + j]`, `k` in `0..=steps`.
    pub positions: Vec<Vec2>,
    pub velocities: Vec<Vec2>,
    /// `rewards[k * targets + i]`.
    pub rewards: Vec<f64>,
    /// Stage cost of `x_k` for `k < steps`, and the terminal cost at index `steps`.
    pub stage_costs: Vec<f64>,
}

impl Rollout {
    pub fn position(&self, k: usize, j: usize) -> Vec2 {
        self.positions[k * self.vehicles + j]
    }

    pub fn velocity(&self, k: usize, j: usize) -> Vec2 {
        self.velocities[k * self.vehicles + j]
    }

    pub fn rewards_at(&self, k: usize) -> &[f64] {
        &self.rewards[k * self.targets..(k + 1) * self.targets]
    }

    /// State at step `k` laid out as `[q_1x, q_1y, .., v_1x, v_1y, .., r_1, ..]`.
    pub fn state_vector(&self, k: usize) -> Vec<f64> {
        let m = self.vehicles;
        let mut x = Vec::with_capacity(4 * m + self.targets);
        for j in 0..m {
            x.extend_from_slice(&self.position(k, j));
        }
        for j in 0..m {
            x.extend_from_slice(&self.velocity(k, j));
        }
        x.extend_from_slice(self.rewards_at(k));
        x
    }
}

#[inline]
fn control(u: &[f64], m: usize, k: usize, j: usize) -> Vec2 {
    let base = (k * m + j) * 2;
    [u[base], u[base + 1]]
}

/// Vehicle positions and velocities for `k` in `0..=steps`.
pub(crate) fn rollout_vehicles(ocp: &OcpProblem, u: &[f64]) -> (Vec<Vec2>, Vec<Vec2>) {
    let m = ocp.vehicles();
    let n_s = ocp.horizon_steps;
    let t = ocp.sample_time;
    let half_t2 = 0.5 * t * t;
    let mut q = Vec::with_capacity((n_s + 1) * m);
    let mut v = Vec::with_capacity((n_s + 1) * m);
    for s in &ocp.fleet.vehicles {
        q.push(s.q);
        v.push(s.v);
    }
    for k in 0..n_s {
        for j in 0..m {
            let a = control(u, m, k, j);
            let (qk, vk) = (q[k * m + j], v[k * m + j]);
            q.push([qk[0] + vk[0] * t + a[0] * half_t2, qk[1] + vk[1] * t + a[1] * half_t2]);
            v.push([vk[0] + a[0] * t, vk[1] + a[1] * t]);
        }
    }
    (q, v)
}

fn stage_value(mode: StageMode, r: &[f64]) -> f64 {
    match mode {
        StageMode::Squared => r.iter().map(|x| x * x).sum(),
        StageMode::Linear => r.iter().sum(),
    }
}

#[inline]
fn stage_derivative(mode: StageMode, r: f64) -> f64 {
    match mode {
        StageMode::Squared => 2.0 * r,
        StageMode::Linear => 1.0,
    }
}

/// Per-step sensitivities recorded by the forward pass for the reverse sweep.
#[derive(Default)]
struct Sensitivity {
    /// Saturated coverage `c` for each `(k, i)`.
    coverage: Vec<f64>,
    /// `dc/dS * ∂f/∂(p - q_j)` for each `(k, i, j)`.
    slope: Vec<Vec2>,
}

fn rollout_with(ocp: &OcpProblem, u: &[f64], saturation: Saturation) -> Result<Rollout> {
    forward(ocp, u, saturation, None)
}

fn forward(ocp: &OcpProblem, u: &[f64], saturation: Saturation, sens: Option<&mut Sensitivity>) -> Result<Rollout> {
    ocp.check_shape(u)?;
    let (m, n, n_s) = (ocp.vehicles(), ocp.targets(), ocp.horizon_steps);
    let (positions, velocities) = rollout_vehicles(ocp, u);
    let growth = ocp.sample_time * ocp.rewards.k_gain;
    let mut rewards = Vec::with_capacity((n_s + 1) * n);
    rewards.extend_from_slice(&ocp.rewards.values);
    let record = sens.is_some();
    let (mut coverage, mut slope) = if record {
        (vec![0.0; n_s * n], vec![[0.0; 2]; n_s * n * m])
    } else {
        (Vec::new(), Vec::new())
    };
    for k in 0..n_s {
        let targets = &ocp.target_trajectory[k];
        let q_k = &positions[k * m..(k + 1) * m];
        for (i, p) in targets.iter().enumerate() {
            let cell = k * n + i;
            let mut s = 0.0;
            if record {
                for (j, q) in q_k.iter().enumerate() {
                    let (f, gx, gy) = butterworth_2d_grad(p[0] - q[0], p[1] - q[1], &ocp.sensor);
                    s += f;
                    slope[cell * m + j] = [gx, gy];
                }
            } else {
                for q in q_k {
                    s += butterworth_2d(p[0] - q[0], p[1] - q[1], &ocp.sensor);
                }
            }
            let (c, dc) = saturation.apply(s);
            if record {
                coverage[cell] = c;
                for g in &mut slope[cell * m..(cell + 1) * m] {
                    g[0] *= dc;
                    g[1] *= dc;
                }
            }
            rewards.push((rewards[cell] + growth) * (1.0 - c));
        }
    }
    if let Some(sens) = sens {
        sens.coverage = coverage;
        sens.slope = slope;
    }
    let mut stage_costs = Vec::with_capacity(n_s + 1);
    for k in 0..n_s {
        stage_costs.push(stage_value(ocp.cost.stage, &rewards[k * n..(k + 1) * n]));
    }
    let terminal = match ocp.cost.terminal {
        TerminalMode::SameAsStage => stage_value(ocp.cost.stage, &rewards[n_s * n..]),
        TerminalMode::EndpointSoft { weight, target } => (0..m)
            .map(|j| {
                let q = positions[n_s * m + j];
                weight * ((q[0] - target[0]).powi(2) + (q[1] - target[1]).powi(2))
            })
            .sum(),
    };
    stage_costs.push(terminal);

    for k in 0..=n_s {
        let finite = positions[k * m..(k + 1) * m].iter().chain(&velocities[k * m..(k + 1) * m]).all(|p| p[0].is_finite() && p[1].is_finite())
            && rewards[k * n..(k + 1) * n].iter().all(|r| r.is_finite());
        if !finite {
            return Err(Error::NonFinite { step: k });
        }
    }
    Ok(Rollout {
        steps: n_s,
        vehicles: m,
        targets: n,
        positions,
        velocities,
        rewards,
        stage_costs,
    })
}

/// Forward simulation with the planner's (smooth) reward model.
pub fn rollout(ocp: &OcpProblem, controls: &[f64]) -> Result<Rollout> {
    rollout_with(ocp, controls, ocp.saturation)
}

/// Forward simulation with the exact `min(1, ·)` reward model.
pub fn rollout_exact(ocp: &OcpProblem, controls: &[f64]) -> Result<Rollout> {
    rollout_with(ocp, controls, Saturation::Hard)
}

fn input_change_cost(ocp: &OcpProblem, u: &[f64]) -> f64 {
    let m = ocp.vehicles();
    let mut total = 0.0;
    for k in 0..ocp.horizon_steps {
        for j in 0..m {
            let a = control(u, m, k, j);
            let prev = previous_input(ocp, u, k, j);
            total += (a[0] - prev[0]).powi(2) + (a[1] - prev[1]).powi(2);
        }
    }
    ocp.cost.input_penalty * total
}

#[inline]
fn previous_input(ocp: &OcpProblem, u: &[f64], k: usize, j: usize) -> Vec2 {
    if k == 0 {
        ocp.previous_control.as_ref().map_or([0.0, 0.0], |p| p[j])
    } else {
        control(u, ocp.vehicles(), k - 1, j)
    }
}

/// Total cost of a rollout: stage and terminal terms plus the input-change penalty.
pub fn total_cost(ocp: &OcpProblem, controls: &[f64], traj: &Rollout) -> f64 {
    traj.stage_costs.iter().sum::<f64>() + input_change_cost(ocp, controls)
}

/// Cost evaluated with the exact saturation, used to rank candidate plans.
pub fn exact_cost(ocp: &OcpProblem, controls: &[f64]) -> Result<f64> {
    let traj = rollout_exact(ocp, controls)?;
    Ok(total_cost(ocp, controls, &traj))
}

/// Cost and its gradient with respect to every control, by reverse accumulation.
pub fn cost_and_gradient(ocp: &OcpProblem, controls: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut sens = Sensitivity::default();
    let traj = forward(ocp, controls, ocp.saturation, Some(&mut sens))?;
    let cost = total_cost(ocp, controls, &traj);
    let mut grad = vec![0.0; controls.len()];
    backward(ocp, controls, &traj, &sens, &mut grad);
    Ok((cost, grad))
}

/// Reverse sweep. Accumulates the cost gradient into `grad`.
fn backward(ocp: &OcpProblem, u: &[f64], traj: &Rollout, sens: &Sensitivity, grad: &mut [f64]) {
    let (m, n, n_s) = (ocp.vehicles(), ocp.targets(), ocp.horizon_steps);
    let t = ocp.sample_time;
    let half_t2 = 0.5 * t * t;
    let growth = t * ocp.rewards.k_gain;
    let stage = ocp.cost.stage;

    // Adjoints of the state at step k+1 while processing step k.
    let mut lam_r = vec![0.0; n];
    let mut lam_q = vec![[0.0; 2]; m];
    let mut lam_v = vec![[0.0; 2]; m];
    match ocp.cost.terminal {
        TerminalMode::SameAsStage => {
            for (l, &r) in lam_r.iter_mut().zip(traj.rewards_at(n_s)) {
                *l = stage_derivative(stage, r);
            }
        }
        TerminalMode::EndpointSoft { weight, target } => {
            for (j, l) in lam_q.iter_mut().enumerate() {
                let q = traj.position(n_s, j);
                *l = [2.0 * weight * (q[0] - target[0]), 2.0 * weight * (q[1] - target[1])];
            }
        }
    }

    for k in (0..n_s).rev() {
        for j in 0..m {
            let base = (k * m + j) * 2;
            grad[base] += half_t2 * lam_q[j][0] + t * lam_v[j][0];
            grad[base + 1] += half_t2 * lam_q[j][1] + t * lam_v[j][1];
        }
        // Propagate to step k. Velocity first since it needs lam_q at k+1.
        for j in 0..m {
            lam_v[j][0] += t * lam_q[j][0];
            lam_v[j][1] += t * lam_q[j][1];
        }
        let r_k = traj.rewards_at(k);
        for i in 0..n {
            let lam_next = lam_r[i];
            let c = sens.coverage[k * n + i];
            lam_r[i] = stage_derivative(stage, r_k[i]) + lam_next * (1.0 - c);
            if k > 0 && lam_next != 0.0 {
                // d r_{k+1} / d q_j = -(r_k + growth) * dc * ∂f/∂(q_j)
                let w = lam_next * (r_k[i] + growth);
                let slope = &sens.slope[(k * n + i) * m..(k * n + i + 1) * m];
                for j in 0..m {
                    lam_q[j][0] += w * slope[j][0];
                    lam_q[j][1] += w * slope[j][1];
                }
            }
        }
    }

    let k_r = ocp.cost.input_penalty;
    if k_r != 0.0 {
        for k in 0..n_s {
            for j in 0..m {
                let a = control(u, m, k, j);
                let prev = previous_input(ocp, u, k, j);
                let base = (k * m + j) * 2;
                grad[base] += 2.0 * k_r * (a[0] - prev[0]);
                grad[base + 1] += 2.0 * k_r * (a[1] - prev[1]);
                if k > 0 {
                    let pb = ((k - 1) * m + j) * 2;
                    grad[pb] -= 2.0 * k_r * (a[0] - prev[0]);
                    grad[pb + 1] -= 2.0 * k_r * (a[1] - prev[1]);
                }
            }
        }
    }
}

/// Back-propagates position and velocity sensitivities through the vehicle
/// dynamics only. `dq[k * m + j]` and `dv[k * m + j]` hold direct partials of
/// some scalar with respect to the states; the control gradient is accumulated
/// into `grad`.
pub(crate) fn backward_vehicles(ocp: &OcpProblem, dq: &[Vec2], dv: &[Vec2], grad: &mut [f64]) {
    let m = ocp.vehicles();
    let n_s = ocp.horizon_steps;
    let t = ocp.sample_time;
    let half_t2 = 0.5 * t * t;
    let mut lam_q = vec![[0.0; 2]; m];
    let mut lam_v = vec![[0.0; 2]; m];
    for j in 0..m {
        lam_q[j] = dq[n_s * m + j];
        lam_v[j] = dv[n_s * m + j];
    }
    for k in (0..n_s).rev() {
        for j in 0..m {
            let base = (k * m + j) * 2;
            grad[base] += half_t2 * lam_q[j][0] + t * lam_v[j][0];
            grad[base + 1] += half_t2 * lam_q[j][1] + t * lam_v[j][1];
            lam_v[j][0] += t * lam_q[j][0] + dv[k * m + j][0];
            lam_v[j][1] += t * lam_q[j][1] + dv[k * m + j][1];
            lam_q[j][0] += dq[k * m + j][0];
            lam_q[j][1] += dq[k * m + j][1];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{reward_step, MotionLimits, VehicleState};

    fn single(n_s: usize, target: Vec2, q0: Vec2) -> OcpProblem {
        OcpProblem {
            horizon_steps: n_s,
            sample_time: 0.25,
            fleet: FleetState {
                vehicles: vec![VehicleState::at(q0[0], q0[1])],
                limits: MotionLimits { v_max: 1.0, a_max: 2.0, d_min: 0.5 },
            },
            rewards: RewardVector::uniform(1, 10.0, 1.0),
            target_trajectory: vec![vec![target]; n_s + 1],
            sensor: SensorParams::new(0.25, 8).unwrap(),
            cost: CostConfig::default(),
            previous_control: None,
            saturation: Saturation::DEFAULT_SMOOTH,
        }
    }

    #[test]
    fn zero_controls_hold_position_and_rewards_grow() {
        let ocp = single(20, [5.0, 5.0], [0.0, 0.0]);
        let u = vec![0.0; ocp.control_dim()];
        let traj = rollout(&ocp, &u).unwrap();
        for k in 0..=20 {
            assert_eq!(traj.position(k, 0), [0.0, 0.0]);
        }
        for k in 1..=20 {
            assert!(traj.rewards_at(k)[0] > traj.rewards_at(k - 1)[0]);
        }
        assert_eq!(traj.steps as f64 * ocp.sample_time, 5.0);
        assert_eq!(traj.state_vector(0), vec![0.0, 0.0, 0.0, 0.0, 10.0]);
    }

    #[test]
    fn vehicle_on_target_pins_reward() {
        let mut ocp = single(12, [1.0, 1.0], [1.0, 1.0]);
        ocp.saturation = Saturation::Hard;
        let u: Vec<f64> = (0..ocp.control_dim()).map(|i| if i % 2 == 0 { 0.0 } else { 1e-3 }).collect();
        let traj = rollout(&ocp, &u).unwrap();
        assert!(traj.rewards_at(1)[0] == 0.0);
        for k in 1..=12 {
            assert!(traj.rewards_at(k)[0] < 0.3, "k={k} r={}", traj.rewards_at(k)[0]);
        }
    }

    #[test]
    fn shape_mismatch_is_a_contract_error() {
        let ocp = single(3, [0.0, 0.0], [2.0, 0.0]);
        assert!(matches!(rollout(&ocp, &[0.0; 5]), Err(Error::Contract(_))));
        assert!(cost_and_gradient(&ocp, &[0.0; 7]).is_err());
    }

    #[test]
    fn non_finite_state_names_the_step() {
        let ocp = single(3, [0.0, 0.0], [2.0, 0.0]);
        let mut u = vec![0.0; ocp.control_dim()];
        u[2] = f64::INFINITY;
        match rollout(&ocp, &u) {
            Err(Error::NonFinite { step }) => assert_eq!(step, 2),
            other => panic!("{other:?}"),
        }
    }

    /// Scalar recurrence using the public single-step model, one target at a time.
    #[test]
    fn static_far_vehicle_cost_matches_recurrence() {
        let mut ocp = single(20, [0.0, 0.0], [40.0, 0.0]);
        ocp.cost.input_penalty = 0.0;
        ocp.saturation = Saturation::Hard;
        let u = vec![0.0; ocp.control_dim()];
        let traj = rollout(&ocp, &u).unwrap();
        let mut r = ocp.rewards.clone();
        let mut expected = 0.0;
        for _ in 0..=20 {
            expected += r.values[0] * r.values[0];
            r = reward_step(&r, &[[0.0, 0.0]], &[[40.0, 0.0]], &ocp.sensor, 0.25).unwrap();
        }
        let cost = total_cost(&ocp, &u, &traj);
        assert!((cost - expected).abs() < 1e-9 * expected, "{cost} vs {expected}");
    }

    #[test]
    fn constant_controls_have_no_change_penalty_beyond_first_step() {
        let mut ocp = single(5, [0.0, 0.0], [3.0, 0.0]);
        ocp.previous_control = Some(vec![[0.3, -0.2]]);
        let u: Vec<f64> = (0..ocp.control_dim()).map(|i| if i % 2 == 0 { 0.3 } else { -0.2 }).collect();
        assert_eq!(input_change_cost(&ocp, &u), 0.0);
        ocp.previous_control = None;
        assert!((input_change_cost(&ocp, &u) - 1e-3 * 0.13).abs() < 1e-15);
    }
}
