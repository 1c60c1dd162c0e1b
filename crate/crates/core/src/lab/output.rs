//! CSV and JSON emission. Floats are written with Rust's shortest
//! round-trip formatting, so re-reading an emitted file reproduces the
//! in-memory arrays exactly and identical runs produce byte-identical
//! files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

use super::config::ExperimentConfig;
use super::grad_study::GradStudyRow;
use super::sim::TrajectoryRecord;
use super::sweep::{BoundarySweep, SafeRegionSweep};

/// Provenance of a run: the resolved config, master seed and library
/// version, written next to every artifact as `run.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub version: String,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: &ExperimentConfig) -> Self {
        Self {
            command: command.to_string(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
        }
    }
}

pub fn write_run_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn state_header(n: usize, out: &mut String) {
    for d in 0..n {
        let _ = write!(out, ",x{d}");
    }
}

pub fn boundary_csv(sweep: &BoundarySweep) -> String {
    let n = sweep.grid.state(0, 0).len();
    let mut out = String::from("i,j");
    state_header(n, &mut out);
    out.push_str(",value\n");
    let (ni, nj) = sweep.grid.shape();
    for i in 0..ni {
        for j in 0..nj {
            let x = sweep.grid.state(i, j);
            let _ = write!(out, "{i},{j}");
            for d in 0..n {
                let _ = write!(out, ",{}", x[d]);
            }
            let _ = writeln!(out, ",{}", sweep.values[sweep.grid.flat(i, j)]);
        }
    }
    out
}

pub fn write_boundary_csv(path: &Path, sweep: &BoundarySweep) -> Result<()> {
    fs::write(path, boundary_csv(sweep))?;
    Ok(())
}

pub fn safe_region_csv(sweep: &SafeRegionSweep) -> String {
    let n = sweep.grid.state(0, 0).len();
    let mut out = String::from("i,j");
    state_header(n, &mut out);
    out.push_str(",value,safe\n");
    let (ni, nj) = sweep.grid.shape();
    for i in 0..ni {
        for j in 0..nj {
            let x = sweep.grid.state(i, j);
            let flat = sweep.grid.flat(i, j);
            let _ = write!(out, "{i},{j}");
            for d in 0..n {
                let _ = write!(out, ",{}", x[d]);
            }
            let _ = writeln!(
                out,
                ",{},{}",
                sweep.values[flat],
                if sweep.safe[flat] { 1 } else { 0 }
            );
        }
    }
    out
}

pub fn write_safe_region_csv(path: &Path, sweep: &SafeRegionSweep) -> Result<()> {
    fs::write(path, safe_region_csv(sweep))?;
    Ok(())
}

pub fn trajectory_csv(rec: &TrajectoryRecord) -> String {
    let n = rec.states.first().map_or(0, |s| s.len());
    let m = rec.controls.first().map_or(0, |u| u.len());
    let mut out = String::from("t");
    state_header(n, &mut out);
    for d in 0..m {
        let _ = write!(out, ",u_nom{d}");
    }
    for d in 0..m {
        let _ = write!(out, ",u{d}");
    }
    out.push_str(",value,status,h\n");
    for k in 0..rec.len() {
        let _ = write!(out, "{}", rec.times[k]);
        for d in 0..n {
            let _ = write!(out, ",{}", rec.states[k][d]);
        }
        for d in 0..m {
            let _ = write!(out, ",{}", rec.controls_nominal[k][d]);
        }
        for d in 0..m {
            let _ = write!(out, ",{}", rec.controls[k][d]);
        }
        let _ = writeln!(
            out,
            ",{},{},{}",
            rec.values[k], rec.statuses[k], rec.h_values[k]
        );
    }
    out
}

pub fn write_trajectory_csv(path: &Path, rec: &TrajectoryRecord) -> Result<()> {
    fs::write(path, trajectory_csv(rec))?;
    Ok(())
}

pub fn grad_study_csv(rows: &[GradStudyRow]) -> String {
    let mut out = String::from("dt,v0,analytic,naive,spline,naive_err,spline_err\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.dt, r.v0, r.analytic, r.naive, r.spline, r.naive_err, r.spline_err
        );
    }
    out
}

pub fn write_grad_study_csv(path: &Path, rows: &[GradStudyRow]) -> Result<()> {
    fs::write(path, grad_study_csv(rows))?;
    Ok(())
}

/// Parse a CSV produced by this module back into header and string cells;
/// numeric columns round-trip exactly through `f64` parsing.
pub fn read_csv(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines
        .next()
        .map(|h| h.split(',').map(str::to_string).collect())
        .unwrap_or_default();
    let rows = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    (header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lab::config::{ExperimentConfig, GridDim};
    use crate::lab::sweep::sweep_filter_boundary;

    #[test]
    fn boundary_csv_round_trips_exactly() {
        let exp = ExperimentConfig::from_json(
            r#"{
            "system": {"kind": "double_integrator", "mass_range": [0.8, 1.2], "position_bound": 1.0},
            "policy": {"kind": "braking"},
            "nominal": {"kind": "constant", "value": [0.0]},
            "value": {"horizon": 3.0, "dt": 0.1, "num_samples": 4},
            "filter": {"alpha": 1.0}
        }"#,
        )
        .unwrap()
        .build(Some(17))
        .unwrap();
        let dims = vec![
            GridDim::Swept {
                lo: -1.3,
                hi: 1.3,
                count: 7,
            },
            GridDim::Swept {
                lo: -1.0,
                hi: 1.0,
                count: 5,
            },
        ];
        let sweep = sweep_filter_boundary(&exp, &dims).unwrap();
        let text = boundary_csv(&sweep);
        let (header, rows) = read_csv(&text);
        assert_eq!(header, vec!["i", "j", "x0", "x1", "value"]);
        assert_eq!(rows.len(), sweep.grid.cell_count());
        for row in &rows {
            let i: usize = row[0].parse().unwrap();
            let j: usize = row[1].parse().unwrap();
            let x: f64 = row[2].parse().unwrap();
            let v: f64 = row[4].parse().unwrap();
            let flat = sweep.grid.flat(i, j);
            assert_eq!(x.to_bits(), sweep.grid.state(i, j)[0].to_bits());
            assert_eq!(v.to_bits(), sweep.values[flat].to_bits());
        }
    }

    #[test]
    fn nan_cells_round_trip() {
        let v: f64 = format!("{}", f64::NAN).parse().unwrap();
        assert!(v.is_nan());
    }
}
