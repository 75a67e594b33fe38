//! Experiment front end: presets, TOML configuration with dotted overrides,
//! run execution against references, and the CSV/JSON artifacts.

mod config;
mod experiments;
mod output;
mod presets;
mod run;

pub use config::{
    parse_override, DahlquistParams, MethodConfig, OutputConfig, PintConfig, Preset, ProblemParams, RunConfig,
    SnapshotFormat,
};
pub use experiments::{
    convergence, fitted_orders, loglog_slope, read_csv, work_precision, wp_slope, write_csv, ConvRow, WpRow, WpSweep,
};
pub use output::{read_state_bin, read_steps_csv, write_artifacts, write_steps_csv, Summary};
pub use presets::ReferenceConfig;
pub use run::{build_sweeper, execute, flatten, local_errors, LocalError, reference_solution, relative_error, Field, Instance, RunOutcome, Snapshot, Status};
