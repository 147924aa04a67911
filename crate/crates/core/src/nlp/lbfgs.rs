//! Projected limited-memory BFGS for box-constrained subproblems.

use std::collections::VecDeque;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum InnerStop {
    Converged,
    /// No decrease could be found along the projected search path.
    Stalled,
    MaxIters,
    WallClock,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct InnerOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub relative_tol: bool,
    pub rel_decrease_tol: f64,
    pub memory: usize,
    pub deadline: Option<Instant>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct InnerOutcome {
    pub stop: InnerStop,
    pub iterations: usize,
    pub evaluations: usize,
    pub degraded: bool,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

#[inline]
fn project(v: f64, lo: f64, hi: f64) -> f64 {
    v.max(lo).min(hi)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Infinity norm of `P(x - g) - x`.
pub(crate) fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let mut m = 0.0f64;
    for i in 0..x.len() {
        let step = project(x[i] - g[i], lo[i], hi[i]) - x[i];
        m = m.max(step.abs());
    }
    m
}

/// Minimizes `eval` over `[lo, hi]` starting from the feasible point `x`, whose
/// value `f` and gradient `g` must already be current. On return `x`, `f`, `g`
/// hold the final iterate; the merit value never increases.
pub(crate) fn minimize_box<F>(
    mut eval: F,
    x: &mut [f64],
    f: &mut f64,
    g: &mut [f64],
    lo: &[f64],
    hi: &[f64],
    opts: &InnerOptions,
) -> InnerOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut dir = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial_g = vec![0.0; n];
    let mut alphas = vec![0.0; opts.memory];
    let mut evaluations = 0;
    let mut degraded = false;

    for iter in 0..=opts.max_iters {
        let tol = if opts.relative_tol { opts.grad_tol * f.abs().max(1.0) } else { opts.grad_tol };
        if projected_gradient_norm(x, g, lo, hi) <= tol {
            return InnerOutcome { stop: InnerStop::Converged, iterations: iter, evaluations, degraded };
        }
        if iter == opts.max_iters {
            return InnerOutcome { stop: InnerStop::MaxIters, iterations: iter, evaluations, degraded };
        }
        if let Some(deadline) = opts.deadline {
            if Instant::now() >= deadline {
                return InnerOutcome { stop: InnerStop::WallClock, iterations: iter, evaluations, degraded };
            }
        }

        // Variables sitting on a bound with the gradient pushing outward stay fixed.
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)))
            .collect();

        let mut accepted = false;
        for use_memory in [true, false] {
            if !use_memory && pairs.is_empty() {
                break;
            }
            if !use_memory {
                pairs.clear();
            }
            two_loop(g, &free, &pairs, &mut alphas, &mut dir);
            let mut slope = dot(g, &dir);
            if !(slope < 0.0) {
                for i in 0..n {
                    dir[i] = if free[i] { -g[i] } else { 0.0 };
                }
                slope = dot(g, &dir);
                if !(slope < 0.0) {
                    break;
                }
            }
            let mut step = if pairs.is_empty() {
                let dmax = dir.iter().fold(0.0f64, |m, d| m.max(d.abs()));
                (1.0 / dmax).min(1.0)
            } else {
                1.0
            };
            for _ in 0..MAX_BACKTRACKS {
                for i in 0..n {
                    trial[i] = project(x[i] + step * dir[i], lo[i], hi[i]);
                }
                let mut moved = false;
                let mut gs = 0.0;
                for i in 0..n {
                    let s = trial[i] - x[i];
                    moved |= s != 0.0;
                    gs += g[i] * s;
                }
                if !moved {
                    break;
                }
                if gs < 0.0 {
                    let ft = eval(&trial, &mut trial_g);
                    evaluations += 1;
                    let finite = ft.is_finite() && trial_g.iter().all(|v| v.is_finite());
                    if !finite {
                        degraded = true;
                    } else if ft <= *f + ARMIJO * gs {
                        let s: Vec<f64> = trial.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
                        let y: Vec<f64> = trial_g.iter().zip(g.iter()).map(|(a, b)| a - b).collect();
                        let sy = dot(&s, &y);
                        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
                            if pairs.len() == opts.memory {
                                pairs.pop_front();
                            }
                            pairs.push_back((s, y, 1.0 / sy));
                        }
                        let previous = *f;
                        x.copy_from_slice(&trial);
                        g.copy_from_slice(&trial_g);
                        *f = ft;
                        accepted = true;
                        let scale = previous.abs().max(ft.abs()).max(f64::MIN_POSITIVE);
                        if (previous - ft) / scale <= opts.rel_decrease_tol {
                            return InnerOutcome {
                                stop: InnerStop::Converged,
                                iterations: iter + 1,
                                evaluations,
                                degraded,
                            };
                        }
                        break;
                    }
                }
                step *= 0.5;
            }
            if accepted {
                break;
            }
        }
        if !accepted {
            return InnerOutcome { stop: InnerStop::Stalled, iterations: iter, evaluations, degraded };
        }
    }
    unreachable!("loop returns on the final iteration")
}

/// `dir = -H g` restricted to the free variables.
fn two_loop(
    g: &[f64],
    free: &[bool],
    pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    alphas: &mut [f64],
    dir: &mut [f64],
) {
    for i in 0..g.len() {
        dir[i] = if free[i] { g[i] } else { 0.0 };
    }
    for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
        let a = rho * dot(s, dir);
        alphas[k] = a;
        for i in 0..dir.len() {
            if free[i] {
                dir[i] -= a * y[i];
            }
        }
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        for d in dir.iter_mut() {
            *d *= gamma;
        }
    }
    for (k, (s, y, rho)) in pairs.iter().enumerate() {
        let b = rho * dot(y, dir);
        for i in 0..dir.len() {
            if free[i] {
                dir[i] += (alphas[k] - b) * s[i];
            }
        }
    }
    for d in dir.iter_mut() {
        *d = -*d;
    }
}
