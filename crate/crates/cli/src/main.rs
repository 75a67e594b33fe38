//! `sdc`: run presets, work-precision sweeps and convergence studies.
//!
//! Exit codes: 0 success, 1 configuration error, 2 aborted run, 3 internal
//! or I/O failure.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sdc_core::harness::{
    self, convergence, fitted_orders, parse_override, work_precision, wp_slope, write_artifacts, write_csv,
    Preset, RunConfig, SnapshotFormat, WpSweep,
};
use sdc_core::{NodeFamily, PrecondKind, SdcError, Strategy};

#[derive(Parser)]
#[command(name = "sdc", version, about = "Adaptive spectral deferred correction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one configuration and write steps.csv, summary.json and the final state.
    Run {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        snapshot: Option<SnapshotArg>,
        /// Skip the comparison against the reference solution.
        #[arg(long)]
        no_error: bool,
    },
    /// Global error and cost over a tolerance or step-size sweep; writes wp.csv.
    WorkPrecision {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<Strategy>>,
        /// Tolerances for the step-adaptive strategies.
        #[arg(long, value_delimiter = ',')]
        tols: Option<Vec<f64>>,
        /// Step sizes for fixed and k-adaptive runs.
        #[arg(long, value_delimiter = ',')]
        dts: Option<Vec<f64>>,
        /// Output file.
        #[arg(long, default_value = "wp.csv")]
        out: PathBuf,
    },
    /// Fixed-step order study over sweep counts and step sizes; writes conv.csv.
    Convergence {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        sweeps: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.025,0.0125")]
        dts: Vec<f64>,
        #[arg(long, default_value = "conv.csv")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SnapshotArg {
    None,
    Csv,
    Binary,
    Both,
}

/// Configuration source plus the frequently used overrides.
#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    eps_tol: Option<f64>,
    #[arg(long)]
    r_tol: Option<f64>,
    /// Initial step size; the step size of fixed and k-adaptive runs.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    nodes: Option<NodeFamily>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    precond: Option<PrecondKind>,
    #[arg(long)]
    t0: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    /// Workers for node-parallel sweeps.
    #[arg(long)]
    workers: Option<usize>,
    /// Steps per Gauss-Seidel block.
    #[arg(long)]
    block_steps: Option<usize>,
    #[arg(long)]
    pipelined: bool,
    #[arg(long)]
    interpolation_restart: bool,
    /// Any other setting as a dotted key, e.g. `problem.mu=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn quoted(s: &str) -> String {
    format!("\"{s}\"")
}

impl Common {
    fn overrides(&self) -> Vec<String> {
        let mut o = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push(format!("{k}={v}"));
            }
        };
        push("preset", self.preset.as_deref().map(quoted));
        push("controller.strategy", self.strategy.map(|s| quoted(s.as_str())));
        push("controller.eps_tol", self.eps_tol.map(float));
        push("controller.r_tol", self.r_tol.map(float));
        push("controller.dt_init", self.dt.map(float));
        push("controller.k_max", self.k_max.map(|v| v.to_string()));
        push("method.nodes", self.nodes.map(|v| quoted(v.as_str())));
        push("method.m", self.m.map(|v| v.to_string()));
        push("method.preconditioner", self.precond.map(|v| quoted(v.as_str())));
        push("t0", self.t0.map(float));
        push("t_end", self.t_end.map(float));
        push("pint.workers", self.workers.map(|v| v.to_string()));
        push("pint.block_steps", self.block_steps.map(|v| v.to_string()));
        push("pint.pipelined", self.pipelined.then(|| "true".into()));
        push("controller.interpolation_restart", self.interpolation_restart.then(|| "true".into()));
        o.extend(self.set.iter().cloned());
        o
    }

    fn resolve(&self) -> Result<RunConfig, SdcError> {
        let text = match &self.config {
            Some(path) => std::fs::read_to_string(path)
                .map_err(|e| SdcError::Config(format!("cannot read {}: {e}", path.display())))?,
            None if self.preset.is_some() => String::new(),
            None => return Err(SdcError::Config("either --config or --preset is required".into())),
        };
        let overrides = self.overrides().iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>()?;
        RunConfig::from_toml_str(&text, &overrides)
    }
}

/// TOML float literal; integers need a fractional part to type-check.
fn float(x: f64) -> String {
    if x.is_finite() && x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{x:.1}")
    } else {
        format!("{x:e}")
    }
}

/// `println!` that ignores a closed stdout, e.g. when piped into `head`.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

enum Failure {
    Config(String),
    Aborted(String),
    Internal(String),
}

impl From<SdcError> for Failure {
    fn from(e: SdcError) -> Self {
        match e {
            SdcError::Config(_) | SdcError::UnknownPreset(_) | SdcError::InvalidArgument(_) => {
                Failure::Config(e.to_string())
            }
            SdcError::Aborted { .. } | SdcError::SolverFailure(_) | SdcError::NonFinite(_) => {
                Failure::Aborted(e.to_string())
            }
            _ => Failure::Internal(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = std::panic::catch_unwind(|| dispatch(cli))
        .unwrap_or_else(|_| Err(Failure::Internal("internal error (panic)".into())));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("sdc: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Aborted(msg)) => {
            eprintln!("sdc: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("sdc: {msg}");
            ExitCode::from(3)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { common, out, snapshot, no_error } => {
            let mut cfg = common.resolve()?;
            if let Some(dir) = out {
                cfg.output.dir = dir;
            }
            if let Some(s) = snapshot {
                cfg.output.snapshot = match s {
                    SnapshotArg::None => SnapshotFormat::None,
                    SnapshotArg::Csv => SnapshotFormat::Csv,
                    SnapshotArg::Binary => SnapshotFormat::Binary,
                    SnapshotArg::Both => SnapshotFormat::Both,
                };
            }
            if no_error {
                cfg.output.global_error = false;
            }
            run(&cfg)
        }
        Command::WorkPrecision { common, strategies, tols, dts, out } => {
            let cfg = common.resolve()?;
            let defaults = WpSweep::default();
            let sweep = WpSweep {
                strategies: strategies.unwrap_or(defaults.strategies),
                tolerances: tols.unwrap_or(defaults.tolerances),
                step_sizes: dts.unwrap_or(defaults.step_sizes),
            };
            let rows = work_precision(&cfg, &sweep)?;
            write_csv(&out, &rows).map_err(|e| Failure::Internal(e.to_string()))?;
            say!("strategy          slope");
            for s in &sweep.strategies {
                say!("{:<17} {:.3}", s.as_str(), wp_slope(&rows, *s));
            }
            say!("wrote {}", out.display());
            Ok(())
        }
        Command::Convergence { common, sweeps, dts, out } => {
            let cfg = common.resolve()?;
            let rows = convergence(&cfg, &sweeps, &dts)?;
            write_csv(&out, &rows).map_err(|e| Failure::Internal(e.to_string()))?;
            say!("k   order");
            for (k, order) in fitted_orders(&rows) {
                say!("{k:<3} {order:.3}");
            }
            say!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn run(cfg: &RunConfig) -> Result<(), Failure> {
    let preset: Preset = cfg.preset;
    let out = harness::execute(cfg)?;
    let written = write_artifacts(&out, &cfg.output.dir, cfg.output.snapshot).map_err(|e| Failure::Internal(e.to_string()))?;
    let r = &out.record;
    say!(
        "{preset} {}: {} steps, {} restarts, {} sweeps, {} Newton iterations, {:.3} s",
        cfg.controller.strategy, r.total_steps, r.restarts, r.sweeps, r.newton_iters, r.wall_seconds
    );
    if let Some(e) = r.final_error {
        say!("relative global error {e:.3e}");
    }
    for p in &written {
        say!("wrote {}", p.display());
    }
    match out.message {
        Some(msg) if !out.completed() => Err(Failure::Aborted(msg)),
        _ => Ok(()),
    }
}
