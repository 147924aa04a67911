use std::time::Instant;

use super::lbfgs::{minimize_box, InnerOptions, InnerStop};
use super::{NlpProblem, OuterRecord, SolverConfig, SolverReport, SolverStatus};
use crate::error::{Error, Result};

/// Minimizes `p` from `x0` (projected onto the box first).
///
/// Returns an error only for malformed input: a dimension mismatch, crossed
/// bounds, or a non-finite objective or gradient at the projected start.
pub fn minimize<P: NlpProblem + ?Sized>(p: &P, x0: &[f64], cfg: &SolverConfig) -> Result<SolverReport> {
    cfg.validate()?;
    let started = Instant::now();
    let deadline = cfg.wall_clock_cap.map(|cap| started + cap);
    let n = p.dim();
    let (lo, hi) = (p.lower_bounds(), p.upper_bounds());
    if x0.len() != n || lo.len() != n || hi.len() != n {
        return Err(Error::Contract(format!(
            "problem has dimension {n} but start has {} entries and bounds {}/{}",
            x0.len(),
            lo.len(),
            hi.len()
        )));
    }
    if let Some(i) = (0..n).find(|&i| !(lo[i] <= hi[i])) {
        return Err(Error::InvalidInput(format!("bounds cross at variable {i}")));
    }

    let mut x: Vec<f64> = (0..n).map(|i| x0[i].max(lo[i]).min(hi[i])).collect();
    let mut g = vec![0.0; n];
    let f0 = p.objective(&x, &mut g);
    if !f0.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("objective or gradient is not finite at the start point".into()));
    }

    let m = p.num_constraints();
    let mut lambda = vec![0.0; m];
    let mut penalty = cfg.penalty_init;
    let mut cons = vec![0.0; m];
    let mut weights = vec![0.0; m];

    let mut iterations = 0;
    let mut evaluations = 1;
    let mut degraded = false;
    let mut history = Vec::new();
    let mut status = SolverStatus::IterationCapped;
    let mut last_violation = f64::INFINITY;
    let mut inner_tol = cfg.initial_inner_tol.map_or(cfg.convergence_tol, |t| t.max(cfg.convergence_tol));

    for outer in 0..cfg.max_outer_iters {
        let mut merit = |x: &[f64], grad: &mut [f64]| -> f64 {
            let mut value = p.objective(x, grad);
            if m > 0 {
                p.constraints(x, &mut cons);
                let mut extra = 0.0;
                for c in 0..m {
                    let w = (lambda[c] + penalty * cons[c]).max(0.0);
                    weights[c] = w;
                    extra += w * w - lambda[c] * lambda[c];
                }
                value += extra / (2.0 * penalty);
                p.constraints_jtv(x, &weights, grad);
            }
            value
        };

        let mut f = merit(&x, &mut g);
        evaluations += 1;
        let merit_start = f;
        let opts = InnerOptions {
            max_iters: cfg.max_inner_iters,
            grad_tol: inner_tol,
            relative_tol: cfg.relative_tol,
            rel_decrease_tol: cfg.relative_decrease_tol,
            memory: cfg.memory,
            deadline,
        };
        let inner = minimize_box(&mut merit, &mut x, &mut f, &mut g, lo, hi, &opts);
        iterations += inner.iterations;
        evaluations += inner.evaluations;
        degraded |= inner.degraded;

        let violation = max_violation(p, &x, &mut cons);
        history.push(OuterRecord {
            merit_start,
            merit_end: f,
            penalty,
            max_violation: violation,
        });

        if inner.stop == InnerStop::WallClock {
            status = SolverStatus::WallClockCapped;
            break;
        }
        let at_final_tol = inner_tol <= cfg.convergence_tol;
        let settled = matches!(inner.stop, InnerStop::Converged | InnerStop::Stalled) && at_final_tol;
        if violation <= cfg.feasibility_tol {
            if settled {
                status = SolverStatus::Converged;
                break;
            }
            if inner.stop == InnerStop::MaxIters && at_final_tol {
                status = SolverStatus::IterationCapped;
                break;
            }
        }
        if m == 0 && at_final_tol {
            break;
        }
        inner_tol = (0.1 * inner_tol).max(cfg.convergence_tol);
        if outer + 1 == cfg.max_outer_iters {
            break;
        }
        for c in 0..m {
            lambda[c] = (lambda[c] + penalty * cons[c]).max(0.0);
        }
        if violation > 0.25 * last_violation {
            penalty = (penalty * cfg.penalty_growth).min(cfg.penalty_max);
        }
        last_violation = violation;
    }

    let mut scratch = vec![0.0; n];
    let objective = p.objective(&x, &mut scratch);
    let max_violation = max_violation(p, &x, &mut cons);
    if status == SolverStatus::Converged && max_violation > cfg.feasibility_tol {
        status = SolverStatus::IterationCapped;
    }
    Ok(SolverReport {
        x,
        objective,
        status,
        max_violation,
        iterations,
        outer_iterations: history.len(),
        evaluations,
        wall_time: started.elapsed(),
        degraded,
        history,
    })
}

fn max_violation<P: NlpProblem + ?Sized>(p: &P, x: &[f64], cons: &mut [f64]) -> f64 {
    if cons.is_empty() {
        return 0.0;
    }
    p.constraints(x, cons);
    cons.iter().fold(0.0f64, |m, &c| m.max(c))
}
