use impdr_core::models::{vehicle_step, Target};
use impdr_core::sim::*;

fn small_impdr(steps: usize) -> ScenarioConfig {
    let mut cfg = grid_sweep(9, 2).unwrap();
    cfg.duration_steps = steps;
    cfg.horizon_steps = 8;
    cfg
}

#[test]
fn static_planner_ramp_has_the_arithmetic_mean() {
    let cfg = ScenarioConfig {
        planner: PlannerKind::Static,
        duration_steps: 400,
        initial_reward: 0.0,
        warmup_fraction: 0.0,
        ..grid_sweep(4, 1).unwrap()
    };
    let trace = run_closed_loop(&cfg).unwrap();
    assert_eq!(trace.records.len(), 401);
    let m = compute_metrics(&trace);
    // Vehicle at (0.5, 0) sees no target within the evaluation radius.
    assert!((m.r_eq - 50.0).abs() < 1e-9, "{}", m.r_eq);
    assert!((m.r_max - 100.0).abs() < 1e-9, "{}", m.r_max);
    assert_eq!(m.t_avg_ms, 0.0);
}

#[test]
fn constant_rewards_give_that_constant() {
    let cfg = ScenarioConfig {
        planner: PlannerKind::Static,
        duration_steps: 50,
        k_gain: 0.0,
        initial_reward: 7.5,
        ..grid_sweep(4, 1).unwrap()
    };
    let m = compute_metrics(&run_closed_loop(&cfg).unwrap());
    assert_eq!(m.r_eq, 7.5);
    assert!(m.r_avg.iter().all(|&r| r == 7.5));
}

#[test]
fn trace_timestamps_and_lengths() {
    let cfg = small_impdr(12);
    let trace = run_closed_loop(&cfg).unwrap();
    assert!(trace.failure.is_none());
    assert_eq!(trace.records.len(), 13);
    assert_eq!(trace.steps(), 12);
    for (k, r) in trace.records.iter().enumerate() {
        assert_eq!(r.step, k);
        assert_eq!(r.time, k as f64 * 0.25);
        assert_eq!(r.control.is_some(), k < 12);
    }
}

#[test]
fn replaying_recorded_controls_reproduces_states() {
    let cfg = small_impdr(30);
    let trace = run_closed_loop(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_run(&trace, dir.path()).unwrap();
    let table = read_trace_csv(&dir.path().join(TRACE_FILE)).unwrap();
    assert_eq!(table.states.len(), 31);
    let mut state = table.states[0].clone();
    for k in 0..30 {
        let a = table.controls[k].as_ref().unwrap();
        state = state.iter().zip(a).map(|(s, a)| vehicle_step(s, *a, 0.25)).collect();
        for (s, rec) in state.iter().zip(&table.states[k + 1]) {
            for d in 0..2 {
                assert!((s.q[d] - rec.q[d]).abs() <= 1e-12);
                assert!((s.v[d] - rec.v[d]).abs() <= 1e-12);
            }
        }
    }
    assert!(table.controls[30].is_none());
}

#[test]
fn identical_seeds_give_identical_trace_bytes() {
    let mut cfg = small_impdr(10);
    cfg.mpc.multistart_count = 3;
    cfg.mpc.reward_noise_sigma = 0.1;
    let write = |cfg: &ScenarioConfig| {
        let mut buf = Vec::new();
        write_trace_csv(&run_closed_loop(cfg).unwrap(), &mut buf).unwrap();
        buf
    };
    assert_eq!(write(&cfg), write(&cfg));
}

#[test]
fn model_and_evaluation_rewards_are_stored_separately() {
    let trace = run_closed_loop(&small_impdr(20)).unwrap();
    let differ = trace.records.iter().any(|r| r.r_model != r.r_eval);
    assert!(differ, "soft-footprint and disc rewards never diverged");
    for r in &trace.records {
        assert!(r.r_model.iter().chain(&r.r_eval).all(|&x| x >= 0.0));
    }
}

#[test]
fn injected_target_extends_the_state() {
    let mut sim = Simulation::new(&small_impdr(6)).unwrap();
    sim.step().unwrap();
    sim.step().unwrap();
    let n = sim.targets().len();
    sim.inject_target(Target::fixed(1.0, 1.0), 0.0).unwrap();
    sim.inject_target(Target::fixed(1.0, 1.0), 0.0).unwrap();
    assert_eq!(sim.targets().len(), n + 2);
    assert_eq!(&sim.model_rewards()[n..], &[0.0, 0.0]);
    while sim.step().unwrap() {}
    let trace = sim.finish();
    assert_eq!(trace.target_columns, n + 2);
    let mut buf = Vec::new();
    write_trace_csv(&trace, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let row1: Vec<&str> = text.lines().nth(2).unwrap().split(',').collect();
    assert_eq!(row1.len(), trace_header(2, n + 2).len());
    assert!(row1[row1.len() - 8..].iter().all(|c| c.is_empty()));
}

#[test]
fn configured_injection_appears_at_its_step() {
    let mut cfg = small_impdr(8);
    cfg.injections.push(Injection {
        step: 4,
        x: 0.5,
        y: 0.5,
        reward: 3.0,
        drift: AxisDrift::default(),
    });
    let trace = run_closed_loop(&cfg).unwrap();
    assert_eq!(trace.records[3].r_model.len(), 9);
    assert_eq!(trace.records[4].r_model.len(), 10);
    assert_eq!(trace.records[4].r_model[9], 3.0);
}

#[test]
fn flotsam_targets_move_in_the_trace() {
    let mut cfg = flotsam();
    cfg.duration_steps = 4;
    let trace = run_closed_loop(&cfg).unwrap();
    let p0 = trace.records[0].target_positions[0];
    let p4 = trace.records[4].target_positions[0];
    assert_eq!(p0, [0.0, 0.0]);
    let expected = 0.5 * (1.0f64 * std::f64::consts::PI / 10.0).sin();
    assert!((p4[0] - expected).abs() < 1e-15 && p4[1] == 0.0);
}

#[test]
fn grasp_runs_on_the_grid() {
    let mut cfg = top_compare();
    cfg.planner = PlannerKind::GraspUb;
    cfg.duration_steps = 60;
    let trace = run_closed_loop(&cfg).unwrap();
    assert!(trace.failure.is_none());
    let m = compute_metrics(&trace);
    assert!(m.max_abs_accel <= cfg.limits.a_max);
    assert!(m.max_speed <= cfg.limits.v_max + 1e-9);
    // Vehicles end up on grid nodes or between two of them.
    let last = trace.records.last().unwrap();
    for s in &last.vehicles {
        let on_line = (s.q[0] - s.q[0].round()).abs() < 1e-9 || (s.q[1] - s.q[1].round()).abs() < 1e-9;
        assert!(on_line, "{:?}", s.q);
    }
}

#[test]
fn too_close_start_is_rejected() {
    let mut cfg = small_impdr(5);
    cfg.fleet.positions = Some(vec![[0.0, 0.0], [0.1, 0.0]]);
    assert!(Simulation::new(&cfg).is_err());
}

#[test]
fn planner_failure_truncates_the_trace() {
    let mut sim = Simulation::new(&small_impdr(10)).unwrap();
    sim.step().unwrap();
    // Finite reward whose square overflows: the solver rejects the start point.
    sim.inject_target(Target::fixed(1.0, 1.0), 1e200).unwrap();
    assert!(!sim.step().unwrap());
    let trace = sim.finish();
    let failure = trace.failure.as_deref().unwrap();
    assert!(failure.starts_with("step 1:"), "{failure}");
    assert_eq!(trace.records.len(), 2);
    assert!(trace.records[1].control.is_none());
    let mut buf = Vec::new();
    write_trace_csv(&trace, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().last().unwrap().split(',').nth(2), Some("failed"));
    let m = compute_metrics(&trace);
    assert_eq!(m.failure.as_deref(), Some(failure));
    assert_eq!(m.r_avg.len(), 2);
}
