//! Smooth bound- and inequality-constrained minimization.
//!
//! Inequalities `g_c(x) <= 0` are handled by an augmented Lagrangian outer
//! loop. Each subproblem is minimized over the box with a projected
//! limited-memory BFGS method. No randomness is involved, so repeated solves of
//! the same problem are bitwise identical.

mod lbfgs;
mod solver;

use std::time::Duration;

pub use solver::minimize;

/// A smooth minimization problem over a box.
///
/// Constraints are exposed as a vector `g(x)` with `g_c(x) <= 0` feasible. The
/// solver never needs the full Jacobian, only products `Jᵀw`, which lets
/// structured problems evaluate them with a single adjoint pass.
pub trait NlpProblem {
    fn dim(&self) -> usize;

    fn lower_bounds(&self) -> &[f64];

    fn upper_bounds(&self) -> &[f64];

    /// Objective value at `x`; the gradient is written into `grad`.
    fn objective(&self, x: &[f64], grad: &mut [f64]) -> f64;

    fn num_constraints(&self) -> usize {
        0
    }

    /// Writes `g(x)` into `out`.
    fn constraints(&self, _x: &[f64], _out: &mut [f64]) {}

    /// Accumulates `Σ_c weights[c] ∇g_c(x)` into `grad`.
    fn constraints_jtv(&self, _x: &[f64], _weights: &[f64], _grad: &mut [f64]) {}
}

type ValueGrad = Box<dyn Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync>;

/// Closure-backed problem: one callback for the objective and one per inequality.
pub struct FnProblem {
    lower: Vec<f64>,
    upper: Vec<f64>,
    objective: ValueGrad,
    inequalities: Vec<ValueGrad>,
}

impl FnProblem {
    /// Unbounded problem of dimension `dim`.
    pub fn new<F>(dim: usize, objective: F) -> Self
    where
        F: Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync + 'static,
    {
        FnProblem {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
            objective: Box::new(objective),
            inequalities: Vec::new(),
        }
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), self.lower.len(), "lower bound length");
        assert_eq!(upper.len(), self.upper.len(), "upper bound length");
        self.lower = lower;
        self.upper = upper;
        self
    }

    /// Adds `g(x) <= 0`; the callback returns the value and its gradient.
    pub fn with_inequality<G>(mut self, g: G) -> Self
    where
        G: Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync + 'static,
    {
        self.inequalities.push(Box::new(g));
        self
    }
}

impl NlpProblem for FnProblem {
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
        let (f, g) = (self.objective)(x);
        grad.copy_from_slice(&g);
        f
    }

    fn num_constraints(&self) -> usize {
        self.inequalities.len()
    }

    fn constraints(&self, x: &[f64], out: &mut [f64]) {
        for (o, g) in out.iter_mut().zip(&self.inequalities) {
            *o = g(x).0;
        }
    }

    fn constraints_jtv(&self, x: &[f64], weights: &[f64], grad: &mut [f64]) {
        for (&w, g) in weights.iter().zip(&self.inequalities) {
            if w != 0.0 {
                let (_, dg) = g(x);
                for (gi, di) in grad.iter_mut().zip(dg) {
                    *gi += w * di;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    /// Projected-gradient tolerance.
    pub convergence_tol: f64,
    /// Scale `convergence_tol` by `max(1, |merit|)`; otherwise it is absolute.
    pub relative_tol: bool,
    /// Largest accepted constraint value at a converged point.
    pub feasibility_tol: f64,
    /// Subproblems also stop once the relative merit decrease per iteration drops below this.
    pub relative_decrease_tol: f64,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    /// Number of stored correction pairs.
    pub memory: usize,
    pub wall_clock_cap: Option<Duration>,
    /// Tolerance of the first subproblem when set; it shrinks tenfold per
    /// outer iteration down to `convergence_tol`.
    pub initial_inner_tol: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_outer_iters: 30,
            max_inner_iters: 1000,
            convergence_tol: 1e-8,
            relative_tol: false,
            feasibility_tol: 1e-6,
            relative_decrease_tol: 0.0,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            penalty_max: 1e8,
            memory: 10,
            wall_clock_cap: None,
            initial_inner_tol: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> crate::Result<()> {
        use crate::Error;
        if !(self.convergence_tol > 0.0) {
            return Err(Error::param("solver.convergence_tol", "must be > 0"));
        }
        if !(self.feasibility_tol > 0.0) {
            return Err(Error::param("solver.feasibility_tol", "must be > 0"));
        }
        if !(self.penalty_growth > 1.0) {
            return Err(Error::param("solver.penalty_growth", "must be > 1"));
        }
        if !(self.penalty_init > 0.0) {
            return Err(Error::param("solver.penalty_init", "must be > 0"));
        }
        if self.max_outer_iters == 0 || self.max_inner_iters == 0 {
            return Err(Error::param("solver.max_iters", "must be >= 1"));
        }
        if self.initial_inner_tol.is_some_and(|t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::param("solver.initial_inner_tol", "must be finite and > 0"));
        }
        if self.memory == 0 {
            return Err(Error::param("solver.memory", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverStatus {
    Converged,
    WallClockCapped,
    IterationCapped,
}

impl SolverStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverStatus::Converged => "converged",
            SolverStatus::WallClockCapped => "wall-clock-capped",
            SolverStatus::IterationCapped => "iteration-capped",
        }
    }
}

/// Merit values at the start and end of one outer iteration, under that
/// iteration's multipliers and penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterRecord {
    pub merit_start: f64,
    pub merit_end: f64,
    pub penalty: f64,
    pub max_violation: f64,
}

#[derive(Debug, Clone)]
pub struct SolverReport {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: SolverStatus,
    pub max_violation: f64,
    /// Total subproblem iterations.
    pub iterations: usize,
    pub outer_iterations: usize,
    pub evaluations: usize,
    pub wall_time: Duration,
    /// A non-finite value was met during the run and the last finite iterate kept.
    pub degraded: bool,
    pub history: Vec<OuterRecord>,
}

/// Largest componentwise relative error between the analytic objective
/// gradient and a fourth-order central finite difference with step `h`.
///
/// Components are compared relative to `max(|fd_i|, 1e-4 ‖fd‖∞, 1e4 ε |f| / h)`
/// so that entries many orders of magnitude below the dominant ones, or
/// below the round-off level of the difference quotient, do not report
/// noise as error.
pub fn check_gradient<P: NlpProblem + ?Sized>(p: &P, x: &[f64], h: f64) -> f64 {
    gradient_errors(p, x, h).into_iter().fold(0.0, f64::max)
}

/// Per-component errors behind [`check_gradient`].
pub fn gradient_errors<P: NlpProblem + ?Sized>(p: &P, x: &[f64], h: f64) -> Vec<f64> {
    let n = p.dim();
    let mut analytic = vec![0.0; n];
    let f0 = p.objective(x, &mut analytic);
    let mut scratch = vec![0.0; n];
    let mut xp = x.to_vec();
    let mut eval = |xp: &mut Vec<f64>, i: usize, delta: f64| {
        let saved = xp[i];
        xp[i] = saved + delta;
        let f = p.objective(xp, &mut scratch);
        xp[i] = saved;
        f
    };
    let fd: Vec<f64> = (0..n)
        .map(|i| {
            let f1 = eval(&mut xp, i, h);
            let fm1 = eval(&mut xp, i, -h);
            let f2 = eval(&mut xp, i, 2.0 * h);
            let fm2 = eval(&mut xp, i, -2.0 * h);
            (8.0 * (f1 - fm1) - (f2 - fm2)) / (12.0 * h)
        })
        .collect();
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let noise = 1e4 * f64::EPSILON * f0.abs() / h;
    let floor = (1e-4 * scale).max(noise).max(f64::MIN_POSITIVE);
    analytic
        .iter()
        .zip(&fd)
        .map(|(a, f)| (a - f).abs() / f.abs().max(floor))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock() -> FnProblem {
        FnProblem::new(2, |x| {
            let (a, b) = (x[0], x[1]);
            let f = 100.0 * (b - a * a).powi(2) + (1.0 - a).powi(2);
            let g = vec![-400.0 * a * (b - a * a) - 2.0 * (1.0 - a), 200.0 * (b - a * a)];
            (f, g)
        })
    }

    #[test]
    fn quadratic_interior_and_active_bound() {
        let q = |x: &[f64]| ((x[0] - 3.0).powi(2), vec![2.0 * (x[0] - 3.0)]);
        let p = FnProblem::new(1, q).with_bounds(vec![0.0], vec![10.0]);
        let r = minimize(&p, &[0.0], &SolverConfig::default()).unwrap();
        assert_eq!(r.status, SolverStatus::Converged);
        assert!((r.x[0] - 3.0).abs() < 1e-8);
        assert!(r.objective < 1e-14);

        let p = FnProblem::new(1, q).with_bounds(vec![0.0], vec![2.0]);
        let r = minimize(&p, &[0.0], &SolverConfig::default()).unwrap();
        assert_eq!(r.status, SolverStatus::Converged);
        assert_eq!(r.x[0], 2.0);
    }

    #[test]
    fn start_outside_box_is_projected() {
        let p = FnProblem::new(1, |x| ((x[0] - 3.0).powi(2), vec![2.0 * (x[0] - 3.0)]))
            .with_bounds(vec![0.0], vec![2.0]);
        let r = minimize(&p, &[50.0], &SolverConfig::default()).unwrap();
        assert_eq!(r.x[0], 2.0);
    }

    /// Plain gradient descent with a fixed small step, run for many iterations.
    fn gradient_descent_oracle(p: &FnProblem, x0: &[f64], step: f64, iters: usize) -> Vec<f64> {
        let mut x = x0.to_vec();
        let mut g = vec![0.0; x.len()];
        for _ in 0..iters {
            p.objective(&x, &mut g);
            for (xi, gi) in x.iter_mut().zip(&g) {
                *xi -= step * gi;
            }
        }
        x
    }

    #[test]
    fn rosenbrock_from_classic_start() {
        let p = rosenbrock();
        let oracle = gradient_descent_oracle(&p, &[-1.2, 1.0], 1e-3, 2_000_000);
        assert!((oracle[0] - 1.0).abs() < 1e-6 && (oracle[1] - 1.0).abs() < 1e-6);

        let r = minimize(&p, &[-1.2, 1.0], &SolverConfig::default()).unwrap();
        assert_eq!(r.status, SolverStatus::Converged);
        assert!((r.x[0] - oracle[0]).abs() < 1e-6, "{:?}", r.x);
        assert!((r.x[1] - oracle[1]).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn inequality_constrained_circle() {
        // min (x-2)² + (y-2)² s.t. x² + y² <= 2  →  (1, 1)
        let p = FnProblem::new(2, |x| {
            (
                (x[0] - 2.0).powi(2) + (x[1] - 2.0).powi(2),
                vec![2.0 * (x[0] - 2.0), 2.0 * (x[1] - 2.0)],
            )
        })
        .with_inequality(|x| (x[0] * x[0] + x[1] * x[1] - 2.0, vec![2.0 * x[0], 2.0 * x[1]]));
        let r = minimize(&p, &[0.0, 0.0], &SolverConfig::default()).unwrap();
        assert_eq!(r.status, SolverStatus::Converged);
        assert!(r.max_violation <= 1e-6);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{:?}", r.x);
        for rec in &r.history {
            assert!(rec.merit_end <= rec.merit_start);
        }
    }

    #[test]
    fn non_finite_start_is_rejected() {
        let p = FnProblem::new(1, |x| (x[0].ln(), vec![1.0 / x[0]]));
        assert!(minimize(&p, &[-1.0], &SolverConfig::default()).is_err());
    }

    #[test]
    fn non_finite_region_degrades_gracefully() {
        // ln blows up for x <= 0; the unconstrained minimizer of -ln(x) + x is x = 1,
        // but a huge first step would land in the undefined region.
        let p = FnProblem::new(1, |x| {
            if x[0] <= 0.0 {
                (f64::NAN, vec![f64::NAN])
            } else {
                (x[0] * x[0] * 1e-6 - x[0].ln() + x[0], vec![2e-6 * x[0] - 1.0 / x[0] + 1.0])
            }
        });
        let r = minimize(&p, &[0.01], &SolverConfig::default()).unwrap();
        assert!(r.objective.is_finite());
        assert!((r.x[0] - 1.0).abs() < 1e-3, "{:?}", r.x);
    }

    #[test]
    fn wall_clock_cap_returns_incumbent() {
        let p = rosenbrock();
        let cfg = SolverConfig {
            wall_clock_cap: Some(Duration::ZERO),
            ..SolverConfig::default()
        };
        let r = minimize(&p, &[-1.2, 1.0], &cfg).unwrap();
        assert_eq!(r.status, SolverStatus::WallClockCapped);
        assert!(r.objective.is_finite());
    }

    #[test]
    fn gradient_check_detects_corruption() {
        let good = FnProblem::new(3, |x| {
            let f = x[0] * x[0] + 3.0 * x[1] * x[1] + x[0] * x[2];
            (f, vec![2.0 * x[0] + x[2], 6.0 * x[1], x[0]])
        });
        let x = [0.7, -1.3, 2.0];
        assert!(check_gradient(&good, &x, 1e-5) < 1e-9);

        let bad = FnProblem::new(3, |x| {
            let f = x[0] * x[0] + 3.0 * x[1] * x[1] + x[0] * x[2];
            (f, vec![2.0 * x[0] + x[2], 6.0 * x[1] + 1.0, x[0]])
        });
        let err = check_gradient(&bad, &x, 1e-5);
        // True second component is 6 * -1.3 = -7.8.
        assert!((err - 1.0 / 7.8).abs() < 1e-6, "{err}");
    }
}
