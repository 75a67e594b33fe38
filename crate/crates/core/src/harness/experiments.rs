use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::run::execute;
use crate::controller::Strategy;
use crate::error::{Result, SdcError};

/// One row of `wp.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WpRow {
    pub strategy: Strategy,
    /// `eps_tol` for step-adaptive strategies, the step size otherwise.
    pub control: f64,
    pub global_error: f64,
    pub wall_seconds: f64,
    pub sweeps: usize,
    pub newton_iters: usize,
    pub restarts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WpSweep {
    pub strategies: Vec<Strategy>,
    pub tolerances: Vec<f64>,
    pub step_sizes: Vec<f64>,
}

impl Default for WpSweep {
    fn default() -> Self {
        WpSweep {
            strategies: Strategy::ALL.to_vec(),
            tolerances: vec![1e-5, 1e-6, 1e-7, 1e-8, 1e-9],
            step_sizes: vec![1e-1, 5e-2, 2.5e-2, 1.25e-2, 6.25e-3],
        }
    }
}

/// Run every strategy over its control parameters. Aborted runs give a row
/// with `global_error = NaN` and the sweep continues.
pub fn work_precision(base: &RunConfig, sweep: &WpSweep) -> Result<Vec<WpRow>> {
    let mut rows = Vec::new();
    for &strategy in &sweep.strategies {
        let controls = if strategy.is_step_adaptive() { &sweep.tolerances } else { &sweep.step_sizes };
        for &control in controls {
            let mut cfg = base.clone();
            cfg.controller.strategy = strategy;
            cfg.output.global_error = true;
            if strategy.is_step_adaptive() {
                cfg.set_eps_tol(control);
            } else {
                cfg.controller.dt_init = control;
            }
            let out = execute(&cfg)?;
            let global_error = if out.completed() { out.record.final_error.unwrap_or(f64::NAN) } else { f64::NAN };
            log::info!("{strategy} {control:e}: error {global_error:e}, {} steps", out.record.total_steps);
            rows.push(WpRow {
                strategy,
                control,
                global_error,
                wall_seconds: out.record.wall_seconds,
                sweeps: out.record.sweeps,
                newton_iters: out.record.newton_iters,
                restarts: out.record.restarts,
            });
        }
    }
    Ok(rows)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| SdcError::Io(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| SdcError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| SdcError::Io(e.to_string()))?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| SdcError::Io(e.to_string()))
}

/// Least-squares slope of `log y` over `log x`, skipping non-finite or
/// non-positive points.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && b.is_finite() && **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Error-versus-control slope of one strategy's rows.
pub fn wp_slope(rows: &[WpRow], strategy: Strategy) -> f64 {
    let (x, y): (Vec<f64>, Vec<f64>) =
        rows.iter().filter(|r| r.strategy == strategy).map(|r| (r.control, r.global_error)).unzip();
    loglog_slope(&x, &y)
}

/// One row of a convergence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvRow {
    pub k: usize,
    pub dt: f64,
    pub global_error: f64,
    /// Order observed against the previous, larger step size.
    pub observed_order: f64,
}

/// Fixed-step runs with `k` sweeps per step for every `k` and step size.
pub fn convergence(base: &RunConfig, sweeps: &[usize], step_sizes: &[f64]) -> Result<Vec<ConvRow>> {
    let mut rows = Vec::new();
    for &k in sweeps {
        let mut prev: Option<(f64, f64)> = None;
        for &dt in step_sizes {
            let mut cfg = base.clone();
            cfg.controller.strategy = Strategy::Fixed;
            cfg.controller.k_max = k;
            cfg.controller.dt_init = dt;
            cfg.output.global_error = true;
            let out = execute(&cfg)?;
            let err = if out.completed() { out.record.final_error.unwrap_or(f64::NAN) } else { f64::NAN };
            let observed_order = prev.map_or(f64::NAN, |(pdt, perr)| (perr / err).ln() / (pdt / dt).ln());
            rows.push(ConvRow { k, dt, global_error: err, observed_order });
            prev = Some((dt, err));
        }
    }
    Ok(rows)
}

/// Fitted order per sweep count.
pub fn fitted_orders(rows: &[ConvRow]) -> Vec<(usize, f64)> {
    let mut ks: Vec<usize> = rows.iter().map(|r| r.k).collect();
    ks.dedup();
    ks.into_iter()
        .map(|k| {
            let (x, y): (Vec<f64>, Vec<f64>) =
                rows.iter().filter(|r| r.k == k).map(|r| (r.dt, r.global_error)).unzip();
            (k, loglog_slope(&x, &y))
        })
        .collect()
}
