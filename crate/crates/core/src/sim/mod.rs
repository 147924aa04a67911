//! Closed-loop simulation, scenarios and run artifacts.

mod config;
mod metrics;
mod run;
mod scenarios;
mod trace;

pub use config::{
    AxisDrift, FleetSpec, GraspSpec, GridSpec, Injection, LimitSpec, MpcSpec, PlannerKind, PointSpec, ScenarioConfig, SolverSpec,
    TargetSpec,
};
pub use metrics::{compute_metrics, MetricsSummary, METRICS_SCHEMA_VERSION};
pub use run::{run_closed_loop, run_closed_loop_with, ConstraintFlag, PlanRecord, RunTrace, Simulation, StepRecord};
pub use scenarios::{
    bundled_scenarios, exploration, flotsam, grid_sweep, horizon_sweep, scenario_library, top_compare, Scenario, SCENARIO_NAMES,
};
pub use trace::{
    read_trace_csv, trace_header, write_run, write_timings_csv, write_trace_csv, TraceTable, METRICS_FILE, TIMINGS_FILE, TRACE_FILE,
    TRACE_SCHEMA_VERSION,
};
