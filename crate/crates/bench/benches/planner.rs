use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use impdr_core::mpc::{cost_and_gradient, plan_step, random_problem, PlannerConfig};
use impdr_core::sim::{grid_sweep, run_closed_loop, PlannerKind};

fn gradient(c: &mut Criterion) {
    let mut group = c.benchmark_group("cost_and_gradient");
    for n_p in [25, 100] {
        let (ocp, u) = random_problem(7, 3, n_p, 20);
        group.bench_with_input(BenchmarkId::from_parameter(n_p), &n_p, |b, _| {
            b.iter(|| cost_and_gradient(black_box(&ocp), black_box(&u)).unwrap())
        });
    }
    group.finish();
}

fn single_plan(c: &mut Criterion) {
    let mut group = c.benchmark_group("plan_step_cold");
    group.sample_size(10);
    let cfg = PlannerConfig {
        solver: grid_sweep(100, 3).unwrap().mpc.solver.to_config(),
        ..PlannerConfig::default()
    };
    for n_p in [25, 100] {
        let (ocp, _) = random_problem(11, 3, n_p, 20);
        group.bench_with_input(BenchmarkId::from_parameter(n_p), &n_p, |b, _| {
            b.iter(|| plan_step(black_box(&ocp), &cfg, None, 0).unwrap())
        });
    }
    group.finish();
}

fn closed_loop(c: &mut Criterion) {
    let mut group = c.benchmark_group("closed_loop_20_steps");
    group.sample_size(10);
    for (label, planner) in [("impdr", PlannerKind::Impdr), ("grasp-lb", PlannerKind::GraspLb)] {
        for n_p in [25, 100] {
            let mut cfg = grid_sweep(n_p, 3).unwrap();
            cfg.planner = planner;
            cfg.duration_steps = 20;
            group.bench_with_input(BenchmarkId::new(label, n_p), &cfg, |b, cfg| {
                b.iter(|| run_closed_loop(black_box(cfg)).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, gradient, single_plan, closed_loop);
criterion_main!(benches);
