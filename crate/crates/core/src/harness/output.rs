//! On-disk artifacts of a run.
//!
//! * `steps.csv`: one row per attempted step with the columns
//!   `step_index, t, dt, k, eps, residual, accepted, restart_reason, newton_iters`.
//!   `eps` is `NaN` when the step did not converge; `restart_reason` is empty
//!   on accepted rows.
//! * `summary.json`: the aggregates of the run; every count is the fold of
//!   the corresponding `steps.csv` column.
//! * `state.csv`, `state.bin`, `state.json`: the final state. The binary file
//!   holds little-endian `f64` in row-major order, complex entries as
//!   `(re, im)` pairs; `state.json` carries shape, field and domain.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::SnapshotFormat;
use super::run::{Field, RunOutcome, Snapshot, Status};
use crate::controller::StepRecord;
use crate::error::{Result, SdcError};

fn csv_err(e: csv::Error) -> SdcError {
    SdcError::Io(e.to_string())
}

fn json_err(e: serde_json::Error) -> SdcError {
    SdcError::Io(e.to_string())
}

pub fn write_steps_csv(path: &Path, steps: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    if steps.is_empty() {
        w.write_record([
            "step_index",
            "t",
            "dt",
            "k",
            "eps",
            "residual",
            "accepted",
            "restart_reason",
            "newton_iters",
        ])
        .map_err(csv_err)?;
    }
    for s in steps {
        w.serialize(s).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_steps_csv(path: &Path) -> Result<Vec<StepRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err)
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub preset: String,
    pub strategy: String,
    pub status: Status,
    pub message: Option<String>,
    pub t0: f64,
    pub t_end: f64,
    pub final_t: f64,
    pub total_steps: usize,
    pub attempted_steps: usize,
    pub restarts: usize,
    pub sweeps: usize,
    pub newton_iters: usize,
    pub wall_seconds: f64,
    pub final_error: Option<f64>,
    pub workers: usize,
    pub solves_per_worker: Option<Vec<usize>>,
    pub config: serde_json::Value,
}

impl Summary {
    pub fn from_outcome(out: &RunOutcome) -> Result<Self> {
        let r = &out.record;
        Ok(Summary {
            preset: out.config.preset.to_string(),
            strategy: out.config.controller.strategy.to_string(),
            status: out.status,
            message: out.message.clone(),
            t0: r.t0,
            t_end: r.t_end,
            final_t: out.final_t,
            total_steps: r.total_steps,
            attempted_steps: r.attempted_steps,
            restarts: r.restarts,
            sweeps: r.sweeps,
            newton_iters: r.newton_iters,
            wall_seconds: r.wall_seconds,
            final_error: r.final_error.filter(|e| e.is_finite()),
            workers: out.config.pint.workers,
            solves_per_worker: out.solves_per_worker.clone(),
            config: serde_json::to_value(&out.config).map_err(json_err)?,
        })
    }
}

fn write_state_csv(path: &Path, snap: &Snapshot) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let complex = snap.field == Field::Complex;
    let width = if complex { 2 } else { 1 };
    let value_cols = if complex { "re,im" } else { "value" };
    let coord = |axis: usize, i: usize| -> f64 {
        let [lo, hi] = snap.domain[axis];
        let n = snap.shape[axis] as f64;
        // cell centres for the finite-volume grid, left points for periodic ones
        if snap.shape.len() == 1 {
            lo + (i as f64 + 0.5) * (hi - lo) / n
        } else {
            lo + i as f64 * (hi - lo) / n
        }
    };
    match snap.shape.len() {
        1 if snap.domain.is_empty() => {
            writeln!(w, "index,{value_cols}")?;
            for (i, v) in snap.values.chunks(width).enumerate() {
                writeln!(w, "{i},{}", join(v))?;
            }
        }
        1 => {
            writeln!(w, "index,x,{value_cols}")?;
            for (i, v) in snap.values.chunks(width).enumerate() {
                writeln!(w, "{i},{},{}", coord(0, i), join(v))?;
            }
        }
        _ => {
            let cols = snap.shape[1];
            writeln!(w, "i,j,x,y,{value_cols}")?;
            for (idx, v) in snap.values.chunks(width).enumerate() {
                let (i, j) = (idx / cols, idx % cols);
                writeln!(w, "{i},{j},{},{},{}", coord(0, i), coord(1, j), join(v))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",")
}

fn write_state_bin(path: &Path, snap: &Snapshot) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for x in &snap.values {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read `state.json` plus `state.bin` from `dir`.
pub fn read_state_bin(dir: &Path) -> Result<Snapshot> {
    let meta = fs::read_to_string(dir.join("state.json"))?;
    let mut snap: Snapshot = serde_json::from_str(&meta).map_err(json_err)?;
    let bytes = fs::read(dir.join("state.bin"))?;
    if bytes.len() % 8 != 0 {
        return Err(SdcError::Io("state.bin length is not a multiple of 8".into()));
    }
    snap.values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let expected = snap.shape.iter().product::<usize>() * if snap.field == Field::Complex { 2 } else { 1 };
    if snap.values.len() != expected {
        return Err(SdcError::Io(format!("state.bin holds {} values, expected {expected}", snap.values.len())));
    }
    Ok(snap)
}

/// Write `steps.csv`, `summary.json` and the requested snapshot files into
/// `dir`; returns the written paths.
pub fn write_artifacts(out: &RunOutcome, dir: &Path, format: SnapshotFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let steps = dir.join("steps.csv");
    write_steps_csv(&steps, &out.record.steps)?;
    written.push(steps);

    let summary = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&Summary::from_outcome(out)?).map_err(json_err)?;
    fs::write(&summary, text + "\n")?;
    written.push(summary);

    if let Some(snap) = &out.snapshot {
        if format != SnapshotFormat::None {
            let meta = dir.join("state.json");
            fs::write(&meta, serde_json::to_string_pretty(snap).map_err(json_err)? + "\n")?;
            written.push(meta);
        }
        if matches!(format, SnapshotFormat::Csv | SnapshotFormat::Both) {
            let p = dir.join("state.csv");
            write_state_csv(&p, snap)?;
            written.push(p);
        }
        if matches!(format, SnapshotFormat::Binary | SnapshotFormat::Both) {
            let p = dir.join("state.bin");
            write_state_bin(&p, snap)?;
            written.push(p);
        }
    }
    Ok(written)
}
