use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use impdr_core::baselines::{grasp_plan, GraspConfig, GridGraph, TravelModel};
use impdr_core::models::{reward_step, vehicle_step, RewardVector};
use impdr_core::mpc::kop::{configure_kop, kop_horizon_steps, KopParams, OpInstance};
use impdr_core::mpc::{
    cost_and_gradient, gradient_error, plan_step, random_problem, rollout, ControlPlan, OcpProblem,
    PlannerConfig,
};
use impdr_core::nlp::{minimize, FnProblem, SolverConfig};
use impdr_core::sim::grid_sweep;

/// Solves `Q x = c` for symmetric positive definite `Q` by Cholesky.
fn cholesky_solve(q: &[Vec<f64>], c: &[f64]) -> Vec<f64> {
    let n = c.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            l[i][j] = if i == j { (q[i][i] - s).sqrt() } else { (q[i][j] - s) / l[j][j] };
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (c[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    x
}

fn closed_loop_solver() -> SolverConfig {
    grid_sweep(100, 3).unwrap().mpc.solver.to_config()
}

fn translated(ocp: &OcpProblem, d: [f64; 2]) -> OcpProblem {
    let mut t = ocp.clone();
    for v in &mut t.fleet.vehicles {
        v.q = [v.q[0] + d[0], v.q[1] + d[1]];
    }
    for row in &mut t.target_trajectory {
        for p in row.iter_mut() {
            *p = [p[0] + d[0], p[1] + d[1]];
        }
    }
    t
}

/// Applies the first control of `plan` and moves the horizon one step on.
fn advance(ocp: &OcpProblem, plan: &ControlPlan) -> OcpProblem {
    let mut next = ocp.clone();
    let applied: Vec<[f64; 2]> = (0..ocp.vehicles()).map(|j| plan.control(0, j)).collect();
    let positions: Vec<[f64; 2]> = ocp.fleet.vehicles.iter().map(|v| v.q).collect();
    next.rewards = reward_step(&ocp.rewards, &ocp.target_trajectory[0], &positions, &ocp.sensor, ocp.sample_time).unwrap();
    for (v, a) in next.fleet.vehicles.iter_mut().zip(&applied) {
        *v = vehicle_step(v, *a, ocp.sample_time);
    }
    next.target_trajectory.remove(0);
    next.target_trajectory.push(next.target_trajectory.last().unwrap().clone());
    next.previous_control = Some(applied);
    next
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjoint_gradient_matches_differences(seed in any::<u64>(), m in 1usize..=2, n_p in 1usize..=4, n_s in 1usize..=10) {
        let (ocp, u) = random_problem(seed, m, n_p, n_s);
        let err = gradient_error(&ocp, &u);
        prop_assert!(err < 1e-5, "relative error {err:e}");
    }

    #[test]
    fn box_quadratic_matches_clamped_minimizer(seed in any::<u64>(), n in 1usize..=50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..10.0)).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let lo: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..0.0)).collect();
        let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.0..3.0)).collect();
        let (dd, cc) = (d.clone(), c.clone());
        let p = FnProblem::new(n, move |x: &[f64]| {
            let f = (0..x.len()).map(|i| 0.5 * dd[i] * (x[i] - cc[i]).powi(2)).sum();
            (f, (0..x.len()).map(|i| dd[i] * (x[i] - cc[i])).collect())
        })
        .with_bounds(lo.clone(), hi.clone());
        let r = minimize(&p, &vec![0.0; n], &SolverConfig::default()).unwrap();
        for i in 0..n {
            prop_assert!(r.x[i] >= lo[i] && r.x[i] <= hi[i]);
            prop_assert!((r.x[i] - c[i].clamp(lo[i], hi[i])).abs() <= 1e-6);
        }
    }

    #[test]
    fn dense_quadratic_matches_linear_solve(seed in any::<u64>(), n in 1usize..=30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let q: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| (0..n).map(|k| a[k][i] * a[k][j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let expected = cholesky_solve(&q, &c);
        let (qq, cc) = (q.clone(), c.clone());
        let p = FnProblem::new(n, move |x: &[f64]| {
            let qx: Vec<f64> = qq.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect();
            let f = 0.5 * qx.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - cc.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            (f, qx.iter().zip(&cc).map(|(a, b)| a - b).collect())
        });
        let cfg = SolverConfig { max_inner_iters: 5000, ..SolverConfig::default() };
        let r = minimize(&p, &vec![0.0; n], &cfg).unwrap();
        for (i, (got, want)) in r.x.iter().zip(&expected).enumerate() {
            prop_assert!((got - want).abs() <= 1e-6, "x[{}] = {} vs {}", i, got, want);
        }
    }

    #[test]
    fn solver_is_deterministic_and_box_feasible(seed in any::<u64>()) {
        let (ocp, u) = random_problem(seed, 2, 3, 6);
        let cfg = PlannerConfig { solver: closed_loop_solver(), ..PlannerConfig::default() };
        let a = plan_step(&ocp, &cfg, None, 0).unwrap();
        let b = plan_step(&ocp, &cfg, None, 0).unwrap();
        prop_assert_eq!(&a.plan.controls, &b.plan.controls);
        prop_assert_eq!(a.report.objective.to_bits(), b.report.objective.to_bits());
        prop_assert_eq!(a.report.iterations, b.report.iterations);
        let a_max = ocp.fleet.limits.a_max;
        prop_assert!(a.plan.controls.iter().all(|c| c.abs() <= a_max));
        prop_assert_eq!(u.len(), a.plan.controls.len());
        for h in &a.report.history {
            prop_assert!(h.merit_end <= h.merit_start, "{} > {}", h.merit_end, h.merit_start);
        }
    }

    #[test]
    fn cost_is_translation_invariant(seed in any::<u64>(), dx in -50.0f64..50.0, dy in -50.0f64..50.0) {
        let (ocp, u) = random_problem(seed, 2, 3, 8);
        let (f0, g0) = cost_and_gradient(&ocp, &u).unwrap();
        let (f1, g1) = cost_and_gradient(&translated(&ocp, [dx, dy]), &u).unwrap();
        let scale = g0.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!((f0 - f1).abs() <= 1e-9 * f0.abs().max(1.0));
        for (a, b) in g0.iter().zip(&g1) {
            prop_assert!((a - b).abs() <= 1e-7 * scale);
        }
    }

    #[test]
    fn kop_duration_fits_the_budget(c_max in 0.1f64..200.0, ts in prop::sample::select(vec![0.05, 0.1, 0.25, 0.5])) {
        let n = kop_horizon_steps(c_max, ts);
        prop_assert!(n as f64 * ts <= c_max * (1.0 + 1e-12));
        prop_assert!((n + 1) as f64 * ts > c_max);
        let inst = OpInstance::parse("p", "5 1\n0 0 0\n1 1 3\n2 0 0\n").unwrap();
        let params = KopParams { sample_time: ts, ..KopParams::default() };
        if n >= 1 {
            let ocp = configure_kop(&inst, c_max, &params).unwrap();
            prop_assert_eq!(ocp.horizon_steps, n);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn plan_is_translation_equivariant(seed in any::<u64>(), dx in -20.0f64..20.0, dy in -20.0f64..20.0) {
        let (ocp, _) = random_problem(seed, 1, 2, 6);
        let cfg = PlannerConfig::default();
        let moved = translated(&ocp, [dx, dy]);
        let a = plan_step(&ocp, &cfg, None, 0).unwrap();
        let b = plan_step(&moved, &cfg, None, 0).unwrap();
        // Late controls barely move the cost, so they agree only loosely.
        for (x, y) in a.plan.controls.iter().zip(&b.plan.controls) {
            prop_assert!((x - y).abs() <= 1e-2, "{} vs {}", x, y);
        }
        let (ra, rb) = (rollout(&ocp, &a.plan.controls).unwrap(), rollout(&moved, &b.plan.controls).unwrap());
        for k in 0..=ocp.horizon_steps {
            let (p, q) = (ra.position(k, 0), rb.position(k, 0));
            prop_assert!((p[0] + dx - q[0]).abs() <= 1e-3 && (p[1] + dy - q[1]).abs() <= 1e-3);
        }
        prop_assert!((a.exact_cost - b.exact_cost).abs() <= 1e-7 * a.exact_cost.abs().max(1.0));
    }

    #[test]
    fn lower_bound_travel_reduces_at_least_as_much(seed in 0u64..10_000, horizon in 1.0f64..10.0) {
        let g = GridGraph::square(5, 1.0, [0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rewards = RewardVector {
            values: (0..g.node_count()).map(|_| rng.random_range(0.0..20.0)).collect(),
            k_gain: 1.0,
        };
        let starts = [rng.random_range(0..g.node_count()), rng.random_range(0..g.node_count())];
        let cfg = GraspConfig::default();
        let (lb, _) = grasp_plan(&g, TravelModel::LowerBound, &rewards, &starts, horizon, &cfg, seed).unwrap();
        let (ub, _) = grasp_plan(&g, TravelModel::UpperBound, &rewards, &starts, horizon, &cfg, seed).unwrap();
        prop_assert!(lb.objective <= ub.objective + 1e-9, "LB {} > UB {}", lb.objective, ub.objective);
    }
}

/// Cost differences below this fraction are within the solver's resolution.
const COST_RESOLUTION: f64 = 1e-6;

#[test]
fn warm_start_dominates_cold_start() {
    let cfg = PlannerConfig::default();
    let (mut wins, mut total) = (0, 0);
    for (m, n_p) in [(1, 2), (1, 4), (2, 2), (2, 4), (3, 4)] {
        for seed in 0..4 {
            let (mut ocp, _) = random_problem(seed + 100, m, n_p, 10);
            let mut prev = plan_step(&ocp, &cfg, None, 0).unwrap().plan;
            for step in 1..6u64 {
                ocp = advance(&ocp, &prev);
                let warm = plan_step(&ocp, &cfg, Some(&prev), step).unwrap();
                let cold = plan_step(&ocp, &cfg, None, step).unwrap();
                total += 1;
                if warm.exact_cost <= cold.exact_cost + COST_RESOLUTION * cold.exact_cost.abs().max(1.0) {
                    wins += 1;
                }
                prev = warm.plan;
            }
        }
    }
    assert!(wins * 10 >= total * 9, "warm start no worse on {wins}/{total} steps");
}
