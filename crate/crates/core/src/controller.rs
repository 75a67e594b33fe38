//! Step acceptance and step-size selection.
//!
//! Four strategies share one time loop: fixed steps with a fixed sweep
//! count, k-adaptivity (fixed steps, sweep to a residual tolerance),
//! Δt-adaptivity (fixed sweep count, increment estimate) and Δt-k-adaptivity
//! (sweep to a residual tolerance, embedded node estimate).

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::collocation::interpolate_to_nodes;
use crate::error::{Result, SdcError};
use crate::problems::Problem;
use crate::scalar::{all_finite, max_diff, max_norm, Scalar};
use crate::sweeper::{embedded_node_error_estimate, increment_error_estimate, SweepState, Sweeper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Fixed,
    KAdaptive,
    DtAdaptive,
    DtkAdaptive,
}

impl Strategy {
    pub const ALL: [Strategy; 4] =
        [Strategy::Fixed, Strategy::KAdaptive, Strategy::DtAdaptive, Strategy::DtkAdaptive];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Fixed => "fixed",
            Strategy::KAdaptive => "k-adaptive",
            Strategy::DtAdaptive => "dt-adaptive",
            Strategy::DtkAdaptive => "dtk-adaptive",
        }
    }

    pub fn is_step_adaptive(self) -> bool {
        matches!(self, Strategy::DtAdaptive | Strategy::DtkAdaptive)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = SdcError;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| SdcError::invalid(format!("unknown strategy '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub strategy: Strategy,
    pub eps_tol: f64,
    pub r_tol: f64,
    pub beta: f64,
    pub gamma: f64,
    pub k_max: usize,
    pub r_max: f64,
    pub dt_init: f64,
    pub dt_min: Option<f64>,
    pub dt_max: Option<f64>,
    pub interpolation_restart: bool,
    pub restart_budget: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            strategy: Strategy::DtkAdaptive,
            eps_tol: 1e-6,
            r_tol: 1e-11,
            beta: 0.9,
            gamma: 4.0,
            k_max: 16,
            r_max: 1e9,
            dt_init: 1e-2,
            dt_min: None,
            dt_max: None,
            interpolation_restart: false,
            restart_budget: 10_000,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SdcError::Config(m.to_string()));
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad("beta must lie in (0, 1]");
        }
        if !(self.gamma > 1.0) {
            return bad("gamma must exceed 1");
        }
        if self.k_max == 0 {
            return bad("k_max must be at least 1");
        }
        if !(self.dt_init > 0.0 && self.dt_init.is_finite()) {
            return bad("dt_init must be positive");
        }
        if self.strategy.is_step_adaptive() && !(self.eps_tol > 0.0) {
            return bad("eps_tol must be positive for adaptive strategies");
        }
        if matches!(self.strategy, Strategy::KAdaptive | Strategy::DtkAdaptive) && !(self.r_tol > 0.0) {
            return bad("r_tol must be positive");
        }
        if !(self.r_max > 0.0) {
            return bad("r_max must be positive");
        }
        if let Some(lo) = self.dt_min {
            if !(lo > 0.0 && lo <= self.dt_init) {
                return bad("dt_min must satisfy 0 < dt_min <= dt_init");
            }
        }
        if let Some(hi) = self.dt_max {
            if !(hi >= self.dt_init) {
                return bad("dt_max must be at least dt_init");
            }
        }
        Ok(())
    }

    fn clamp(&self, candidate: f64, dt: f64) -> f64 {
        clamp_growth(
            candidate,
            dt,
            self.gamma,
            self.dt_min.unwrap_or(0.0),
            self.dt_max.unwrap_or(f64::INFINITY),
        )
    }
}

/// `β Δt (ε_tol / ε)^{1/p}`; infinite for `ε = 0`, left to [`clamp_growth`].
pub fn optimal_step_size(eps: f64, eps_tol: f64, dt: f64, p: usize, beta: f64) -> f64 {
    if eps == 0.0 {
        return f64::INFINITY;
    }
    beta * dt * (eps_tol / eps).powf(1.0 / p as f64)
}

/// Cap growth at `γ Δt`, then clip to `[dt_min, dt_max]`.
pub fn clamp_growth(candidate: f64, dt: f64, gamma: f64, dt_min: f64, dt_max: f64) -> f64 {
    candidate.min(gamma * dt).max(dt_min).min(dt_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Accept,
    Restart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reason {
    WithinTolerance,
    ErrorExceedsTolerance,
    NoConvergence,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::WithinTolerance => "within-tolerance",
            Reason::ErrorExceedsTolerance => "error-exceeds-tolerance",
            Reason::NoConvergence => "no-convergence",
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepDecision<T> {
    pub verdict: Verdict,
    pub dt_next: f64,
    pub reason: Reason,
    /// Node values for the redone step, valid for `dt_next` only.
    pub initial_guess: Option<Vec<Vec<T>>>,
}

/// Telemetry of one attempted step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_index: usize,
    pub t: f64,
    pub dt: f64,
    pub k: usize,
    pub eps: f64,
    pub residual: f64,
    pub accepted: bool,
    pub restart_reason: Option<Reason>,
    pub newton_iters: usize,
}

/// Per-step records plus aggregates over the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub steps: Vec<StepRecord>,
    pub t0: f64,
    pub t_end: f64,
    pub total_steps: usize,
    pub attempted_steps: usize,
    pub restarts: usize,
    pub sweeps: usize,
    pub newton_iters: usize,
    pub wall_seconds: f64,
    pub final_error: Option<f64>,
}

impl RunRecord {
    /// Aggregates folded from the step list.
    pub fn from_steps(steps: Vec<StepRecord>, t0: f64, t_end: f64, wall_seconds: f64) -> Self {
        let total_steps = steps.iter().filter(|s| s.accepted).count();
        RunRecord {
            t0,
            t_end,
            total_steps,
            attempted_steps: steps.len(),
            restarts: steps.len() - total_steps,
            sweeps: steps.iter().map(|s| s.k).sum(),
            newton_iters: steps.iter().map(|s| s.newton_iters).sum(),
            wall_seconds,
            final_error: None,
            steps,
        }
    }

    pub fn accepted(&self) -> impl Iterator<Item = &StepRecord> {
        self.steps.iter().filter(|s| s.accepted)
    }
}

/// Result of one attempted step.
#[derive(Debug, Clone)]
pub struct StepOutcome<T> {
    pub record: StepRecord,
    pub decision: StepDecision<T>,
    pub u_end: Vec<T>,
}

/// Attempt one step of size `dt` from `(t, u0)` with the configured strategy.
pub fn step<P>(
    problem: &P,
    sweeper: &Sweeper,
    config: &ControllerConfig,
    t: f64,
    dt: f64,
    u0: &[P::Scalar],
    guess: Option<Vec<Vec<P::Scalar>>>,
) -> Result<StepOutcome<P::Scalar>>
where
    P: Problem + ?Sized,
{
    let state = match guess {
        Some(g) => SweepState::with_guess(problem, sweeper.quad(), t, dt, u0, g)?,
        None => sweeper.initial_state(problem, t, dt, u0)?,
    };
    match config.strategy {
        Strategy::Fixed => step_fixed(problem, sweeper, config, state),
        Strategy::KAdaptive => step_k_adaptive(problem, sweeper, config, state),
        Strategy::DtAdaptive => step_dt_adaptive(problem, sweeper, config, state),
        Strategy::DtkAdaptive => step_dtk_adaptive(problem, sweeper, config, state),
    }
}

fn record<T: Scalar>(state: &SweepState<T>, eps: f64, decision: &StepDecision<T>) -> StepRecord {
    let accepted = decision.verdict == Verdict::Accept;
    StepRecord {
        step_index: 0,
        t: state.t,
        dt: state.dt,
        k: state.k,
        eps,
        residual: state.residual,
        accepted,
        restart_reason: (!accepted).then_some(decision.reason),
        newton_iters: state.newton_count,
    }
}

fn finish<T: Scalar>(
    sweeper: &Sweeper,
    state: SweepState<T>,
    eps: f64,
    decision: StepDecision<T>,
) -> Result<StepOutcome<T>> {
    let u_end = state.end_value(sweeper.quad());
    if !all_finite(&u_end) || eps.is_nan() {
        return Err(SdcError::NonFinite("step result"));
    }
    Ok(StepOutcome { record: record(&state, eps, &decision), decision, u_end })
}

fn accept<T>(dt_next: f64) -> StepDecision<T> {
    StepDecision { verdict: Verdict::Accept, dt_next, reason: Reason::WithinTolerance, initial_guess: None }
}

/// Sweep `n` times and return the increment of the last sweep.
fn sweep_n<P>(problem: &P, sweeper: &Sweeper, state: &mut SweepState<P::Scalar>, n: usize) -> Result<f64>
where
    P: Problem + ?Sized,
{
    let mut eps = 0.0;
    for _ in 0..n {
        let last = state.u[state.m() - 1].clone();
        sweeper.sweep(problem, state)?;
        eps = max_diff(&state.u[state.m() - 1], &last);
    }
    Ok(eps)
}

/// Exactly `k_max` sweeps; always accepted.
pub fn step_fixed<P>(
    problem: &P,
    sweeper: &Sweeper,
    config: &ControllerConfig,
    mut state: SweepState<P::Scalar>,
) -> Result<StepOutcome<P::Scalar>>
where
    P: Problem + ?Sized,
{
    let eps = sweep_n(problem, sweeper, &mut state, config.k_max)?;
    let dt = state.dt;
    finish(sweeper, state, eps, accept(dt))
}

/// Residuals below `RESIDUAL_FLOOR * max(1, |u0|)` are roundoff, so a smaller
/// `r_tol` is raised to that level.
pub const RESIDUAL_FLOOR: f64 = 100.0 * f64::EPSILON;

fn attainable_r_tol<T: Scalar>(config: &ControllerConfig, u0: &[T]) -> f64 {
    config.r_tol.max(RESIDUAL_FLOOR * max_norm(u0).max(1.0))
}

/// Sweep until the residual reaches `r_tol` or `k_max` sweeps; always accepted.
pub fn step_k_adaptive<P>(
    problem: &P,
    sweeper: &Sweeper,
    config: &ControllerConfig,
    mut state: SweepState<P::Scalar>,
) -> Result<StepOutcome<P::Scalar>>
where
    P: Problem + ?Sized,
{
    let r_tol = attainable_r_tol(config, &state.u0);
    let mut eps = 0.0;
    while state.k < config.k_max {
        eps = sweep_n(problem, sweeper, &mut state, 1)?;
        if state.residual <= r_tol {
            break;
        }
    }
    let dt = state.dt;
    finish(sweeper, state, eps, accept(dt))
}

/// Algorithm with a fixed sweep count and the increment as error estimate.
pub fn step_dt_adaptive<P>(
    problem: &P,
    sweeper: &Sweeper,
    config: &ControllerConfig,
    mut state: SweepState<P::Scalar>,
) -> Result<StepOutcome<P::Scalar>>
where
    P: Problem + ?Sized,
{
    let mut prev = state.clone();
    for _ in 0..config.k_max {
        prev = state.clone();
        sweeper.sweep(problem, &mut state)?;
    }
    let eps = increment_error_estimate(&state, &prev)?;
    let dt = state.dt;
    let dt_next = config.clamp(optimal_step_size(eps, config.eps_tol, dt, config.k_max, config.beta), dt);
    let decision = if eps <= config.eps_tol {
        accept(dt_next)
    } else {
        StepDecision {
            verdict: Verdict::Restart,
            dt_next,
            reason: Reason::ErrorExceedsTolerance,
            initial_guess: None,
        }
    };
    finish(sweeper, state, eps, decision)
}

/// Algorithm iterating to the residual tolerance with the embedded estimate.
pub fn step_dtk_adaptive<P>(
    problem: &P,
    sweeper: &Sweeper,
    config: &ControllerConfig,
    mut state: SweepState<P::Scalar>,
) -> Result<StepOutcome<P::Scalar>>
where
    P: Problem + ?Sized,
{
    let m = sweeper.m();
    if m < 2 {
        return Err(SdcError::Config("dtk-adaptivity needs at least two nodes".into()));
    }
    let dt = state.dt;
    let r_tol = attainable_r_tol(config, &state.u0);
    let outcome = sweeper.solve_collocation(problem, &mut state, r_tol, config.k_max, config.r_max)?;
    if !outcome.converged {
        let decision = StepDecision {
            verdict: Verdict::Restart,
            dt_next: dt / config.gamma,
            reason: Reason::NoConvergence,
            initial_guess: None,
        };
        let record = record(&state, f64::NAN, &decision);
        let u_end = state.u0.clone();
        return Ok(StepOutcome { record, decision, u_end });
    }
    let eps = embedded_node_error_estimate(&state, sweeper.nodes())?;
    let dt_next = config.clamp(optimal_step_size(eps, config.eps_tol, dt, m, config.beta), dt);
    let decision = if eps <= config.eps_tol {
        accept(dt_next)
    } else {
        let initial_guess = if config.interpolation_restart && dt_next <= dt {
            Some(interpolate_to_nodes(sweeper.nodes(), &state.u0, &state.u, dt, dt_next)?)
        } else {
            None
        };
        StepDecision { verdict: Verdict::Restart, dt_next, reason: Reason::ErrorExceedsTolerance, initial_guess }
    };
    finish(sweeper, state, eps, decision)
}

/// Output of a completed integration.
#[derive(Debug, Clone)]
pub struct Run<T> {
    pub record: RunRecord,
    pub state: Vec<T>,
}

/// An aborted integration with the steps recorded up to the failure.
#[derive(Debug, Clone)]
pub struct RunFailure {
    pub error: SdcError,
    pub record: RunRecord,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for RunFailure {}

/// Integrate from `t0` to `t_end`, hitting `t_end` exactly.
pub fn integrate<P>(
    problem: &P,
    sweeper: &Sweeper,
    config: &ControllerConfig,
    t0: f64,
    t_end: f64,
    u0: &[P::Scalar],
) -> std::result::Result<Run<P::Scalar>, Box<RunFailure>>
where
    P: Problem + ?Sized,
{
    integrate_observed(problem, sweeper, config, t0, t_end, u0, |_: &StepRecord, _: &[P::Scalar], _: Option<&[P::Scalar]>| {})
}

/// [`integrate`] calling `observer` after every attempted step with the
/// record, the step's initial value and, if accepted, its end value.
pub fn integrate_observed<P, F>(
    problem: &P,
    sweeper: &Sweeper,
    config: &ControllerConfig,
    t0: f64,
    t_end: f64,
    u0: &[P::Scalar],
    mut observer: F,
) -> std::result::Result<Run<P::Scalar>, Box<RunFailure>>
where
    P: Problem + ?Sized,
    F: FnMut(&StepRecord, &[P::Scalar], Option<&[P::Scalar]>),
{
    let mut steps = Vec::new();
    let started = Instant::now();
    let fail = |error: SdcError, steps: Vec<StepRecord>, started: Instant| {
        let record = RunRecord::from_steps(steps, t0, t_end, started.elapsed().as_secs_f64());
        Box::new(RunFailure { error, record })
    };
    if let Err(e) = config.validate() {
        return Err(fail(e, steps, started));
    }
    if !(t_end > t0) {
        return Err(fail(SdcError::Config("t_end must exceed t0".into()), steps, started));
    }
    let span = t_end - t0;
    let mut t = t0;
    let mut u = u0.to_vec();
    let mut dt = config.dt_init;
    let mut guess: Option<(f64, Vec<Vec<P::Scalar>>)> = None;
    let mut restarts = 0usize;
    // compensation of the running sum `t`, so long runs of equal steps land on t_end
    let mut carry = 0.0;
    while t < t_end {
        let remaining = t_end - t;
        let dt_step = if remaining < dt * (1.0 + 1e-10) { remaining } else { dt };
        if dt_step <= 1e-14 * span.max(t.abs()) {
            let e = SdcError::Aborted { t, reason: format!("step size underflow (dt = {dt_step:e})") };
            return Err(fail(e, steps, started));
        }
        let g = guess.take().filter(|(gdt, _)| *gdt == dt_step).map(|(_, g)| g);
        let out = match step(problem, sweeper, config, t, dt_step, &u, g) {
            Ok(out) => out,
            Err(e) => {
                let e = SdcError::Aborted { t, reason: e.to_string() };
                return Err(fail(e, steps, started));
            }
        };
        let mut rec = out.record;
        rec.step_index = steps.len();
        let accepted = rec.accepted;
        observer(&rec, &u, accepted.then_some(out.u_end.as_slice()));
        steps.push(rec);
        dt = out.decision.dt_next;
        if accepted {
            u = out.u_end;
            if dt_step == remaining {
                t = t_end;
            } else {
                let y = dt_step - carry;
                let sum = t + y;
                carry = (sum - t) - y;
                t = sum;
            }
        } else {
            restarts += 1;
            log::debug!("restart at t = {t:e}: {:?}, dt -> {dt:e}", out.decision.reason);
            if restarts > config.restart_budget {
                let e = SdcError::Aborted { t, reason: "restart budget exhausted".into() };
                return Err(fail(e, steps, started));
            }
            guess = out.decision.initial_guess.map(|g| (dt, g));
        }
    }
    let wall = started.elapsed().as_secs_f64();
    Ok(Run { record: RunRecord::from_steps(steps, t0, t_end, wall), state: u })
}
