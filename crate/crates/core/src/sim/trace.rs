//! On-disk run artifacts.
//!
//! `trace.csv` has one row per recorded step:
//!
//! | column | meaning |
//! |---|---|
//! | `step`, `time` | step index and `step * T_s` |
//! | `status` | solver status, `held`, `static`, `grasp`, `approach`, `end` or `failed` |
//! | `solver_iters` | solver iterations of the plan made at this step |
//! | `constraint_flag` | `ok`, `infeasible` or `brake` |
//! | `q{j}_x … a{j}_y` | position, velocity and applied acceleration of vehicle `j` |
//! | `p{i}_x, p{i}_y, r_model{i}, r_eval{i}` | position and rewards of target `i` |
//!
//! Accelerations are empty on the last row; target cells are empty before
//! the target appears. Solver wall times live in `timings.csv` so the trace
//! itself is reproducible byte for byte.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::models::{Vec2, VehicleState};

use super::metrics::{compute_metrics, MetricsSummary};
use super::config::PlannerKind;
use super::run::RunTrace;

pub const TRACE_SCHEMA_VERSION: u32 = 1;
pub const TRACE_FILE: &str = "trace.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const METRICS_FILE: &str = "metrics.json";

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

pub fn trace_header(vehicles: usize, targets: usize) -> Vec<String> {
    let mut h: Vec<String> = ["step", "time", "status", "solver_iters", "constraint_flag"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for j in 0..vehicles {
        for name in ["q", "v", "a"] {
            h.push(format!("{name}{j}_x"));
            h.push(format!("{name}{j}_y"));
        }
    }
    for i in 0..targets {
        h.push(format!("p{i}_x"));
        h.push(format!("p{i}_y"));
        h.push(format!("r_model{i}"));
        h.push(format!("r_eval{i}"));
    }
    h
}

pub fn write_trace_csv<W: Write>(trace: &RunTrace, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trace_header(trace.vehicles, trace.target_columns))?;
    let last = trace.records.len().saturating_sub(1);
    for (idx, r) in trace.records.iter().enumerate() {
        let mut row = vec![r.step.to_string(), r.time.to_string()];
        let status = match (&r.plan, &r.control) {
            (Some(p), _) => p.status.clone(),
            (None, Some(_)) if trace.planner == PlannerKind::Static => "static".into(),
            (None, Some(_)) => "held".into(),
            (None, None) if idx == last && trace.failure.is_some() => "failed".into(),
            (None, None) => "end".into(),
        };
        row.push(status);
        row.push(r.plan.as_ref().map_or(String::new(), |p| p.iterations.to_string()));
        row.push(r.constraint_flag.as_str().into());
        for (j, s) in r.vehicles.iter().enumerate() {
            row.extend([s.q[0], s.q[1], s.v[0], s.v[1]].iter().map(f64::to_string));
            match &r.control {
                Some(a) => row.extend([a[j][0].to_string(), a[j][1].to_string()]),
                None => row.extend([String::new(), String::new()]),
            }
        }
        for i in 0..trace.target_columns {
            match r.target_positions.get(i) {
                Some(p) => row.extend([p[0], p[1], r.r_model[i], r.r_eval[i]].iter().map(f64::to_string)),
                None => row.extend(std::iter::repeat_n(String::new(), 4)),
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timings_csv<W: Write>(trace: &RunTrace, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "solver_ms"])?;
    for r in &trace.records {
        if let Some(p) = &r.plan {
            w.write_record([r.step.to_string(), p.solver_ms.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `trace.csv`, `timings.csv` and `metrics.json` into `dir` and
/// returns the metrics together with the written paths.
pub fn write_run(trace: &RunTrace, dir: &Path) -> Result<(MetricsSummary, Vec<PathBuf>)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let trace_path = dir.join(TRACE_FILE);
    let f = File::create(&trace_path).map_err(|e| Error::io(&trace_path, e))?;
    write_trace_csv(trace, std::io::BufWriter::new(f)).map_err(|e| csv_error(&trace_path, e))?;

    let timings_path = dir.join(TIMINGS_FILE);
    let f = File::create(&timings_path).map_err(|e| Error::io(&timings_path, e))?;
    write_timings_csv(trace, std::io::BufWriter::new(f)).map_err(|e| csv_error(&timings_path, e))?;

    let metrics = compute_metrics(trace);
    let metrics_path = dir.join(METRICS_FILE);
    let json = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
    std::fs::write(&metrics_path, json + "\n").map_err(|e| Error::io(&metrics_path, e))?;
    Ok((metrics, vec![trace_path, timings_path, metrics_path]))
}

/// Vehicle states and applied controls read back from a trace file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceTable {
    pub header: Vec<String>,
    pub vehicles: usize,
    pub targets: usize,
    pub time: Vec<f64>,
    pub states: Vec<Vec<VehicleState>>,
    /// One entry per row; `None` where no control was applied.
    pub controls: Vec<Option<Vec<Vec2>>>,
    /// Target position, model reward and evaluation reward; `None` before the target appears.
    pub target_rows: Vec<Vec<Option<(Vec2, f64, f64)>>>,
}

fn parse_cell(path: &Path, line: usize, cell: &str) -> Result<Option<f64>> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<f64>().map(Some).map_err(|_| Error::Parse {
        path: path.display().to_string(),
        line,
        message: format!("`{cell}` is not a number"),
    })
}

pub fn read_trace_csv(path: &Path) -> Result<TraceTable> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = rdr.headers().map_err(|e| csv_error(path, e))?.iter().map(String::from).collect();
    let vehicles = header.iter().filter(|h| h.starts_with('q') && h.ends_with("_x")).count();
    let targets = header.iter().filter(|h| h.starts_with("r_model")).count();
    let fixed = 5;
    if header.len() != fixed + 6 * vehicles + 4 * targets || header[..fixed] != trace_header(0, 0)[..] {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: "header does not match the trace schema".into(),
        });
    }
    let mut table = TraceTable {
        header,
        vehicles,
        targets,
        ..TraceTable::default()
    };
    for (row_idx, rec) in rdr.records().enumerate() {
        let line = row_idx + 2;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let num = |c: usize| parse_cell(path, line, rec.get(c).unwrap_or(""));
        let need = |c: usize| -> Result<f64> {
            num(c)?.ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line,
                message: format!("column {} is empty", c + 1),
            })
        };
        table.time.push(need(1)?);
        let mut states = Vec::with_capacity(vehicles);
        let mut controls = Vec::with_capacity(vehicles);
        let mut has_control = true;
        for j in 0..vehicles {
            let b = fixed + 6 * j;
            states.push(VehicleState {
                q: [need(b)?, need(b + 1)?],
                v: [need(b + 2)?, need(b + 3)?],
            });
            match (num(b + 4)?, num(b + 5)?) {
                (Some(x), Some(y)) => controls.push([x, y]),
                _ => has_control = false,
            }
        }
        table.states.push(states);
        table.controls.push(has_control.then_some(controls));
        let base = fixed + 6 * vehicles;
        let mut tr = Vec::with_capacity(targets);
        for i in 0..targets {
            let b = base + 4 * i;
            tr.push(match (num(b)?, num(b + 1)?, num(b + 2)?, num(b + 3)?) {
                (Some(x), Some(y), Some(rm), Some(re)) => Some(([x, y], rm, re)),
                _ => None,
            });
        }
        table.target_rows.push(tr);
    }
    Ok(table)
}
