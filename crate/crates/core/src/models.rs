//! Sensor, reward, evaluation, vehicle and target-drift models.
//!
//! Everything here is a pure function of its arguments. The planner, the
//! baselines and the closed-loop simulator all share these definitions so that
//! predictions and the simulated truth cannot drift apart.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A planar point or vector `[x, y]`.
pub type Vec2 = [f64; 2];

#[inline]
pub fn dist(a: Vec2, b: Vec2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Butterworth-shaped sensor footprint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorParams {
    /// Cut-off range in meters; the footprint equals 0.5 at this distance.
    pub cutoff: f64,
    /// Degree of the Butterworth function. Higher is closer to a hard disc.
    pub degree: u32,
}

impl SensorParams {
    pub fn new(cutoff: f64, degree: u32) -> Result<Self> {
        let p = SensorParams { cutoff, degree };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff.is_finite() && self.cutoff > 0.0) {
            return Err(Error::param("sensor.cutoff", "must be finite and > 0"));
        }
        if self.degree < 1 {
            return Err(Error::param("sensor.degree", "must be >= 1"));
        }
        Ok(())
    }
}

/// One-dimensional Butterworth footprint `1 / (1 + (|x|/c_b)^n_b)`.
///
/// The absolute value keeps odd degrees well defined for negative `x`.
pub fn butterworth_1d(x: f64, p: &SensorParams) -> f64 {
    let ratio = x.abs() / p.cutoff;
    1.0 / (1.0 + ratio.powi(p.degree as i32))
}

/// Radially symmetric footprint evaluated at the offset `(dx, dy)`.
#[inline]
pub fn butterworth_2d(dx: f64, dy: f64, p: &SensorParams) -> f64 {
    butterworth_2d_grad(dx, dy, p).0
}

/// Footprint value together with its partial derivatives with respect to `dx` and `dy`.
#[inline]
pub fn butterworth_2d_grad(dx: f64, dy: f64, p: &SensorParams) -> (f64, f64, f64) {
    let s = dx * dx + dy * dy;
    let n = p.degree as i32;
    let c = p.cutoff;
    if p.degree.is_multiple_of(2) {
        // Work on the squared distance so that no square root is needed.
        let inv_c2 = (c * c).recip();
        let u = s * inv_c2;
        let half = n / 2;
        let lower = u.powi(half - 1);
        let f = (1.0 + lower * u).recip();
        let df_ds = -(half as f64) * lower * inv_c2 * f * f;
        (f, 2.0 * dx * df_ds, 2.0 * dy * df_ds)
    } else {
        let d = s.sqrt();
        let rho = d / c;
        let f = 1.0 / (1.0 + rho.powi(n));
        if d == 0.0 {
            return (f, 0.0, 0.0);
        }
        let df_drho = -(n as f64) * rho.powi(n - 1) * f * f;
        let scale = df_drho / (c * d);
        (f, dx * scale, dy * scale)
    }
}

/// How the summed sensor coverage of several vehicles is limited to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Saturation {
    /// `min(1, s)`; used by the simulated truth.
    Hard,
    /// C¹ approximation of `min(1, s)`, exact outside `|s - 1| >= band / 2`.
    Smooth { band: f64 },
}

impl Saturation {
    pub const DEFAULT_SMOOTH: Saturation = Saturation::Smooth { band: 0.01 };

    /// Returns the saturated value and its derivative with respect to `s`.
    #[inline]
    pub fn apply(&self, s: f64) -> (f64, f64) {
        match *self {
            Saturation::Hard => {
                if s < 1.0 {
                    (s, 1.0)
                } else {
                    (1.0, 0.0)
                }
            }
            Saturation::Smooth { band } => {
                let h = 0.5 * band;
                let x = s - 1.0;
                if x <= -h {
                    (s, 1.0)
                } else if x >= h {
                    (1.0, 0.0)
                } else {
                    let excess = (x + h) * (x + h) / (4.0 * h);
                    (s - excess, 1.0 - (x + h) / (2.0 * h))
                }
            }
        }
    }
}

/// Reward states of all targets together with the common growth rate.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardVector {
    pub values: Vec<f64>,
    /// Reward increase rate in 1/s.
    pub k_gain: f64,
}

impl RewardVector {
    pub fn uniform(n: usize, value: f64, k_gain: f64) -> Self {
        RewardVector {
            values: vec![value; n],
            k_gain,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Summed coverage of one target by every vehicle, before saturation.
pub fn raw_coverage(target: Vec2, vehicles: &[Vec2], p: &SensorParams) -> f64 {
    vehicles
        .iter()
        .map(|q| butterworth_2d(target[0] - q[0], target[1] - q[1], p))
        .sum()
}

/// Advances the reward states by one sampling period using the sensor model.
///
/// `r_i' = (r_i + T_s k_gain) (1 - min(1, Σ_j f_b2(p_i - q_j)))`.
pub fn reward_step(
    r: &RewardVector,
    targets: &[Vec2],
    vehicles: &[Vec2],
    p: &SensorParams,
    sample_time: f64,
) -> Result<RewardVector> {
    reward_step_with(r, targets, vehicles, p, sample_time, Saturation::Hard)
}

pub fn reward_step_with(
    r: &RewardVector,
    targets: &[Vec2],
    vehicles: &[Vec2],
    p: &SensorParams,
    sample_time: f64,
    saturation: Saturation,
) -> Result<RewardVector> {
    if targets.len() != r.len() {
        return Err(Error::Contract(format!(
            "reward vector has {} entries but {} target positions were given",
            r.len(),
            targets.len()
        )));
    }
    let growth = sample_time * r.k_gain;
    let values = r
        .values
        .iter()
        .zip(targets)
        .map(|(&ri, &target)| {
            let (coverage, _) = saturation.apply(raw_coverage(target, vehicles, p));
            (ri + growth) * (1.0 - coverage)
        })
        .collect();
    Ok(RewardVector {
        values,
        k_gain: r.k_gain,
    })
}

/// Evaluation model: a reward is reset whenever some vehicle is within `eval_radius`.
pub fn eval_reward_step(
    r_eval: &RewardVector,
    targets: &[Vec2],
    vehicles: &[Vec2],
    eval_radius: f64,
    sample_time: f64,
) -> Result<RewardVector> {
    if targets.len() != r_eval.len() {
        return Err(Error::Contract(format!(
            "evaluation reward vector has {} entries but {} target positions were given",
            r_eval.len(),
            targets.len()
        )));
    }
    let growth = sample_time * r_eval.k_gain;
    let values = r_eval
        .values
        .iter()
        .zip(targets)
        .map(|(&ri, &target)| {
            if vehicles.iter().any(|&q| dist(target, q) <= eval_radius) {
                0.0
            } else {
                ri + growth
            }
        })
        .collect();
    Ok(RewardVector {
        values,
        k_gain: r_eval.k_gain,
    })
}

/// Position and velocity of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub q: Vec2,
    #[serde(default)]
    pub v: Vec2,
}

impl VehicleState {
    pub fn at(x: f64, y: f64) -> Self {
        VehicleState {
            q: [x, y],
            v: [0.0, 0.0],
        }
    }

    pub fn speed(&self) -> f64 {
        self.v[0].hypot(self.v[1])
    }
}

/// Exact zero-order-hold discretization of the planar double integrator.
pub fn vehicle_step(s: &VehicleState, a: Vec2, sample_time: f64) -> VehicleState {
    let half_t2 = 0.5 * sample_time * sample_time;
    VehicleState {
        q: [
            s.q[0] + s.v[0] * sample_time + a[0] * half_t2,
            s.q[1] + s.v[1] * sample_time + a[1] * half_t2,
        ],
        v: [s.v[0] + a[0] * sample_time, s.v[1] + a[1] * sample_time],
    }
}

/// Dynamic limits shared by every vehicle of a fleet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionLimits {
    /// Maximum speed, m/s.
    pub v_max: f64,
    /// Maximum acceleration per axis, m/s².
    pub a_max: f64,
    /// Minimum distance between any two vehicles, m.
    pub d_min: f64,
}

impl MotionLimits {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_max.is_finite() && self.v_max > 0.0) {
            return Err(Error::param("v_max", "must be finite and > 0"));
        }
        if !(self.a_max.is_finite() && self.a_max > 0.0) {
            return Err(Error::param("a_max", "must be finite and > 0"));
        }
        if !(self.d_min.is_finite() && self.d_min >= 0.0) {
            return Err(Error::param("d_min", "must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FleetState {
    pub vehicles: Vec<VehicleState>,
    pub limits: MotionLimits,
}

impl FleetState {
    pub fn positions(&self) -> Vec<Vec2> {
        self.vehicles.iter().map(|s| s.q).collect()
    }

    pub fn len(&self) -> usize {
        self.vehicles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MotionConstraint {
    Speed,
    AccelX,
    AccelY,
}

/// Signed violations of the speed and per-axis acceleration limits; `<= 0` is satisfied.
pub fn motion_constraint_violations(
    s: &VehicleState,
    a: Vec2,
    limits: &MotionLimits,
) -> Vec<(MotionConstraint, f64)> {
    vec![
        (MotionConstraint::Speed, s.speed() - limits.v_max),
        (MotionConstraint::AccelX, a[0].abs() - limits.a_max),
        (MotionConstraint::AccelY, a[1].abs() - limits.a_max),
    ]
}

/// Smallest distance over all unordered vehicle pairs.
///
/// Returns `f64::INFINITY` and no pair when fewer than two vehicles exist.
pub fn pairwise_min_distance(positions: &[Vec2]) -> (f64, Option<(usize, usize)>) {
    let mut best = (f64::INFINITY, None);
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            let d = dist(positions[i], positions[j]);
            if d < best.0 || best.1.is_none() {
                best = (d, Some((i, j)));
            }
        }
    }
    best
}

/// Per-axis oscillation plus drift of a floating target.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftParams {
    /// Oscillation amplitude A_p, meters.
    #[serde(default)]
    pub amplitude: f64,
    /// Oscillation angular velocity ω_p, rad/s.
    #[serde(default)]
    pub angular_velocity: f64,
    /// Drift velocity v_d, m/s.
    #[serde(default)]
    pub drift_velocity: f64,
}

impl DriftParams {
    pub fn is_static(&self) -> bool {
        self.amplitude == 0.0 && self.drift_velocity == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::param("drift.amplitude", "must be finite and >= 0"));
        }
        if !(self.angular_velocity >= 0.0 && self.angular_velocity.is_finite()) {
            return Err(Error::param("drift.angular_velocity", "must be finite and >= 0"));
        }
        if !self.drift_velocity.is_finite() {
            return Err(Error::param("drift.drift_velocity", "must be finite"));
        }
        Ok(())
    }
}

/// `t v_d + A_p sin(t ω_p)`.
pub fn drift_offset(t: f64, d: &DriftParams) -> f64 {
    t * d.drift_velocity + d.amplitude * (t * d.angular_velocity).sin()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Target {
    pub base: Vec2,
    /// Independent drift per axis, `[x, y]`.
    #[serde(default)]
    pub drift: [DriftParams; 2],
}

impl Target {
    pub fn fixed(x: f64, y: f64) -> Self {
        Target {
            base: [x, y],
            drift: Default::default(),
        }
    }

    pub fn position_at(&self, t: f64) -> Vec2 {
        let mut p = self.base;
        for (axis, d) in self.drift.iter().enumerate() {
            if !d.is_static() {
                p[axis] += drift_offset(t, d);
            }
        }
        p
    }
}

/// Ordered set of targets; the index of a target is its reward index for the whole run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TargetSet {
    pub targets: Vec<Target>,
}

impl TargetSet {
    pub fn new(targets: Vec<Target>) -> Self {
        TargetSet { targets }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn push(&mut self, target: Target) {
        self.targets.push(target);
    }

    pub fn is_static(&self) -> bool {
        self.targets
            .iter()
            .all(|t| t.drift.iter().all(DriftParams::is_static))
    }
}

pub fn target_positions_at(ts: &TargetSet, t: f64) -> Vec<Vec2> {
    ts.targets.iter().map(|target| target.position_at(t)).collect()
}

/// Square grid of static targets in row-major order (x varies fastest).
pub fn make_grid_targets(width: usize, spacing: f64, origin: Vec2) -> TargetSet {
    let mut targets = Vec::with_capacity(width * width);
    for row in 0..width {
        for col in 0..width {
            targets.push(Target::fixed(
                origin[0] + col as f64 * spacing,
                origin[1] + row as f64 * spacing,
            ));
        }
    }
    TargetSet { targets }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn sensor(c: f64, n: u32) -> SensorParams {
        SensorParams::new(c, n).unwrap()
    }

    #[test]
    fn butterworth_reference_values() {
        for n in [1, 2, 3, 4, 8, 13] {
            let p = sensor(0.7, n);
            assert_eq!(butterworth_1d(0.0, &p), 1.0);
            assert_eq!(butterworth_1d(0.7, &p), 0.5);
        }
        let f = butterworth_1d(2.0, &sensor(1.0, 8));
        assert!((f - 1.0 / 257.0).abs() < 1e-15);
        assert!((f - 3.891e-3).abs() < 1e-6);

        assert_eq!(butterworth_2d(0.0, 0.0, &sensor(0.25, 8)), 1.0);
        assert_eq!(butterworth_2d(0.25, 0.0, &sensor(0.25, 8)), 0.5);
        assert_eq!(butterworth_2d(3.0, 4.0, &sensor(5.0, 2)), 0.5);
        assert_eq!(butterworth_2d(3.0, 4.0, &sensor(5.0, 3)), 0.5);
    }

    #[test]
    fn butterworth_gradient_matches_finite_differences() {
        let h = 1e-6;
        for n in [1, 2, 3, 4, 8] {
            let p = sensor(0.4, n);
            for &(x, y) in &[(0.3, -0.2), (1.1, 0.7), (-0.05, 0.41)] {
                let (_, gx, gy) = butterworth_2d_grad(x, y, &p);
                let fx = (butterworth_2d(x + h, y, &p) - butterworth_2d(x - h, y, &p)) / (2.0 * h);
                let fy = (butterworth_2d(x, y + h, &p) - butterworth_2d(x, y - h, &p)) / (2.0 * h);
                assert!((gx - fx).abs() < 1e-7, "n={n} gx={gx} fd={fx}");
                assert!((gy - fy).abs() < 1e-7, "n={n} gy={gy} fd={fy}");
            }
        }
    }

    #[test]
    fn smooth_saturation_band() {
        let sat = Saturation::DEFAULT_SMOOTH;
        for &s in &[0.0, 0.3, 0.994, 0.995, 1.005, 1.3, 7.0] {
            let (v, _) = sat.apply(s);
            assert!((v - s.min(1.0)).abs() <= 1e-6, "s={s}");
        }
        // C¹ across the band edges.
        let h = 1e-9;
        for &edge in &[0.995, 1.005] {
            let (_, d_lo) = sat.apply(edge - h);
            let (_, d_hi) = sat.apply(edge + h);
            assert!((d_lo - d_hi).abs() < 1e-6);
        }
        let (mid, _) = sat.apply(1.0);
        assert!(mid <= 1.0 && mid > 0.998);
    }

    #[test]
    fn reward_step_far_vehicle_grows() {
        let p = sensor(0.25, 8);
        let r = RewardVector::uniform(1, 10.0, 1.0);
        let out = reward_step(&r, &[[0.0, 0.0]], &[[25.0, 0.0]], &p, 0.25).unwrap();
        let eps = butterworth_2d(25.0, 0.0, &p);
        assert!(eps < 1e-6);
        assert!((out.values[0] - 10.25 * (1.0 - eps)).abs() < 1e-15);
    }

    #[test]
    fn reward_step_nullifies_and_saturates() {
        let p = sensor(0.25, 8);
        let r = RewardVector::uniform(1, 10.0, 1.0);
        let one = reward_step(&r, &[[1.0, 2.0]], &[[1.0, 2.0]], &p, 0.25).unwrap();
        assert_eq!(one.values[0], 0.0);
        let two = reward_step(&r, &[[1.0, 2.0]], &[[1.0, 2.0], [1.0, 2.0]], &p, 0.25).unwrap();
        assert_eq!(two.values[0], 0.0);
    }

    #[test]
    fn reward_step_rejects_length_mismatch() {
        let p = sensor(0.25, 8);
        let r = RewardVector::uniform(2, 1.0, 1.0);
        assert!(matches!(
            reward_step(&r, &[[0.0, 0.0]], &[], &p, 0.25),
            Err(Error::Contract(_))
        ));
        assert!(eval_reward_step(&r, &[[0.0, 0.0]], &[], 0.25, 0.25).is_err());
    }

    #[test]
    fn eval_model_boundary() {
        let r = RewardVector::uniform(1, 3.0, 1.0);
        let at = |d: f64| eval_reward_step(&r, &[[0.0, 0.0]], &[[d, 0.0]], 0.5, 0.25).unwrap().values[0];
        assert_eq!(at(0.5), 0.0);
        assert_eq!(at(0.5 * 0.999), 0.0);
        assert_eq!(at(0.5 * 1.001), 3.25);
        assert_eq!(at(10.0), 3.25);
        let none = eval_reward_step(&r, &[[0.0, 0.0]], &[], 0.5, 0.25).unwrap();
        assert_eq!(none.values[0], 3.25);
    }

    #[test]
    fn model_and_evaluation_agree_on_direct_visit() {
        let p = sensor(0.5, 4);
        let r = RewardVector::uniform(2, 4.0, 1.0);
        let targets = [[0.0, 0.0], [3.0, 0.0]];
        let vehicles = [[3.0, 0.0]];
        let model = reward_step(&r, &targets, &vehicles, &p, 0.25).unwrap();
        let eval = eval_reward_step(&r, &targets, &vehicles, 0.5, 0.25).unwrap();
        assert_eq!(model.values[1], 0.0);
        assert_eq!(eval.values[1], 0.0);
        assert!(model.values[0] > 4.0);
    }

    #[test]
    fn vehicle_step_kinematics() {
        let s = VehicleState { q: [0.0, 0.0], v: [1.0, 0.0] };
        let n = vehicle_step(&s, [0.0, 0.0], 0.25);
        assert_eq!(n.q, [0.25, 0.0]);
        assert_eq!(n.v, [1.0, 0.0]);
        let n = vehicle_step(&VehicleState::default(), [2.0, 0.0], 0.25);
        assert_eq!(n.q, [0.0625, 0.0]);
        assert_eq!(n.v, [0.5, 0.0]);
        let tiny = vehicle_step(&s, [3.0, -2.0], 1e-12);
        assert!(dist(tiny.q, s.q) < 1e-11 && dist(tiny.v, s.v) < 1e-11);
    }

    #[test]
    fn motion_violations() {
        let limits = MotionLimits { v_max: 1.0, a_max: 2.0, d_min: 0.0 };
        let s = VehicleState { q: [0.0; 2], v: [1.0, 0.0] };
        let v = motion_constraint_violations(&s, [2.5, 0.0], &limits);
        assert_eq!(v[0], (MotionConstraint::Speed, 0.0));
        assert_eq!(v[1], (MotionConstraint::AccelX, 0.5));
        assert_eq!(v[2], (MotionConstraint::AccelY, -2.0));
        let s = VehicleState { q: [0.0; 2], v: [1.0, 1.0] };
        let v = motion_constraint_violations(&s, [0.0, 0.0], &limits);
        assert!((v[0].1 - (2f64.sqrt() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn min_distance() {
        assert_eq!(pairwise_min_distance(&[[0.0, 0.0], [3.0, 4.0]]), (5.0, Some((0, 1))));
        let (d, pair) = pairwise_min_distance(&[[1.0, 1.0]]);
        assert!(d.is_infinite() && pair.is_none());
        assert_eq!(pairwise_min_distance(&[[1.0, 1.0]; 3]).0, 0.0);
    }

    #[test]
    fn drift_values() {
        let flotsam = DriftParams { amplitude: 0.5, angular_velocity: PI / 10.0, drift_velocity: 0.0 };
        assert_eq!(drift_offset(0.0, &flotsam), 0.0);
        assert!((drift_offset(5.0, &flotsam) - 0.5).abs() < 1e-15);
        assert!(drift_offset(20.0, &flotsam).abs() < 1e-12);
        let pure = DriftParams { amplitude: 0.0, angular_velocity: 0.0, drift_velocity: 0.1 };
        assert!((drift_offset(10.0, &pure) - 1.0).abs() < 1e-15);

        let mut t = Target::fixed(2.0, 4.0);
        assert_eq!(t.position_at(123.4), [2.0, 4.0]);
        t.drift[0] = flotsam;
        let p = target_positions_at(&TargetSet::new(vec![t]), 5.0);
        assert!((p[0][0] - 2.5).abs() < 1e-15);
        assert_eq!(p[0][1], 4.0);
    }

    #[test]
    fn grid_layout() {
        let g = make_grid_targets(2, 1.0, [0.0, 0.0]);
        let pts: Vec<Vec2> = g.targets.iter().map(|t| t.base).collect();
        assert_eq!(pts, vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        assert_eq!(make_grid_targets(10, 1.0, [0.0, 0.0]).len(), 100);
        let big = make_grid_targets(20, 0.5, [0.0, 0.0]);
        assert_eq!(big.len(), 400);
        assert_eq!(big.targets.last().unwrap().base, [9.5, 9.5]);
    }

    proptest! {
        #[test]
        fn sensor_symmetry(dx in -5.0f64..5.0, dy in -5.0f64..5.0, c in 0.05f64..2.0, n in 1u32..12) {
            let p = sensor(c, n);
            let a = butterworth_2d(dx, dy, &p);
            prop_assert!(a > 0.0 && a <= 1.0);
            prop_assert!((a - butterworth_2d(dy, dx, &p)).abs() < 1e-14);
            prop_assert!((a - butterworth_2d(-dx, -dy, &p)).abs() < 1e-14);
            prop_assert_eq!(butterworth_1d(c, &p), 0.5);
        }

        #[test]
        fn rewards_stay_nonnegative(
            r0 in proptest::collection::vec(0.0f64..100.0, 1..8),
            vehicles in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 0..5),
            seed_pts in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 8),
            n in 1u32..10,
        ) {
            let p = sensor(0.4, n);
            let targets: Vec<Vec2> = seed_pts[..r0.len()].iter().map(|&(x, y)| [x, y]).collect();
            let qs: Vec<Vec2> = vehicles.iter().map(|&(x, y)| [x, y]).collect();
            let r = RewardVector { values: r0, k_gain: 1.0 };
            let out = reward_step(&r, &targets, &qs, &p, 0.25).unwrap();
            prop_assert!(out.values.iter().all(|&v| v >= 0.0));
            let out = reward_step_with(&r, &targets, &qs, &p, 0.25, Saturation::DEFAULT_SMOOTH).unwrap();
            prop_assert!(out.values.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn far_vehicles_allow_growth(r in 0.0f64..100.0, angle in 0.0f64..std::f64::consts::TAU, extra in 0.0f64..20.0, n in 8u32..12) {
            let p = sensor(0.25, n);
            let d = 10.0 * 0.25 + extra;
            let q = [d * angle.cos(), d * angle.sin()];
            let out = reward_step(&RewardVector::uniform(1, r, 1.0), &[[0.0, 0.0]], &[q, q, q], &p, 0.25).unwrap();
            prop_assert!(out.values[0] - r >= 0.99 * 0.25);
        }

        // With n_b = 4 the residual coverage at 10 c_b is 1e-4, so the bound
        // only holds while r stays below ~24 for a single vehicle.
        #[test]
        fn far_vehicle_growth_low_degree(r in 0.0f64..20.0, angle in 0.0f64..std::f64::consts::TAU, extra in 0.0f64..20.0) {
            let p = sensor(0.25, 4);
            let d = 10.0 * 0.25 + extra;
            let q = [d * angle.cos(), d * angle.sin()];
            let out = reward_step(&RewardVector::uniform(1, r, 1.0), &[[0.0, 0.0]], &[q], &p, 0.25).unwrap();
            prop_assert!(out.values[0] - r >= 0.99 * 0.25);
        }

        #[test]
        fn drift_is_periodic(t in 0.0f64..50.0, amp in 0.0f64..1.0, omega in 0.05f64..1.0) {
            let d = DriftParams { amplitude: amp, angular_velocity: omega, drift_velocity: 0.0 };
            let period = 2.0 * std::f64::consts::PI / omega;
            prop_assert!((drift_offset(t + period, &d) - drift_offset(t, &d)).abs() < 1e-12);
        }
    }
}
