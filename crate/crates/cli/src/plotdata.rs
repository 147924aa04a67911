use std::path::{Path, PathBuf};

use anyhow::Context;
use impdr_core::sim::TraceTable;

/// Writes one `frame_<t>.csv` per snapshot time that the trace reaches, and
/// `paths.csv` with every vehicle position. Returns the files written.
pub fn write(table: &TraceTable, times: &[f64], out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut files = Vec::new();
    for &t in times {
        let Some(row) = row_at(&table.time, t) else {
            continue;
        };
        let path = out.join(format!("frame_{}.csv", label(t)));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["time", "target", "x", "y", "r_model", "r_eval"])?;
        for (i, cell) in table.target_rows[row].iter().enumerate() {
            if let Some((p, rm, re)) = cell {
                w.write_record([
                    table.time[row].to_string(),
                    i.to_string(),
                    p[0].to_string(),
                    p[1].to_string(),
                    rm.to_string(),
                    re.to_string(),
                ])?;
            }
        }
        w.flush()?;
        files.push(path);
    }

    let path = out.join("paths.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["vehicle", "step", "time", "x", "y"])?;
    for j in 0..table.vehicles {
        for (k, states) in table.states.iter().enumerate() {
            let q = states[j].q;
            w.write_record([
                j.to_string(),
                k.to_string(),
                table.time[k].to_string(),
                q[0].to_string(),
                q[1].to_string(),
            ])?;
        }
    }
    w.flush()?;
    files.push(path);
    Ok(files)
}

/// Last row at or before `t`, if the trace reaches `t`.
fn row_at(time: &[f64], t: f64) -> Option<usize> {
    let last = *time.last()?;
    if t > last + 1e-9 {
        return None;
    }
    time.iter().rposition(|&s| s <= t + 1e-9)
}

fn label(t: f64) -> String {
    if t.fract() == 0.0 {
        format!("{t:.0}")
    } else {
        t.to_string().replace('.', "p")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_lookup() {
        let time = [0.0, 0.25, 0.5];
        assert_eq!(row_at(&time, 0.3), Some(1));
        assert_eq!(row_at(&time, 0.5), Some(2));
        assert_eq!(row_at(&time, 0.6), None);
        assert_eq!(row_at(&[], 0.0), None);
    }

    #[test]
    fn labels() {
        assert_eq!(label(10.0), "10");
        assert_eq!(label(2.5), "2p5");
    }
}
