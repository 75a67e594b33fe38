//! Spectral deferred correction with adaptive step-size and iteration control.

pub mod collocation;
pub mod controller;
pub mod error;
pub mod harness;
pub mod pint;
pub mod problems;
pub mod scalar;
pub mod sweeper;

pub use controller::{integrate, integrate_observed, ControllerConfig, Run, RunFailure, RunRecord, StepRecord, Strategy};
pub use collocation::{NodeFamily, NodeSet, QuadratureTable};
pub use error::{Result, SdcError};
pub use problems::Problem;
pub use sweeper::{PrecondKind, Preconditioner, Sweeper, SweepState};
