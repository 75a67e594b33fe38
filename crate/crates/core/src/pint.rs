//! Parallel-in-time variants: block Gauß-Seidel SDC across steps and
//! concurrent node solves for diagonal preconditioners.
//!
//! Within a block all `N` steps share one `Δt`. One block iteration sweeps
//! step `j` after handing it the current end value of step `j - 1`, so the
//! only data exchanged between steps is one state per iteration. The
//! pipelined executor runs each step on its own thread and passes these
//! states through channels; it performs the same floating-point operations
//! in the same order as the sequential loop.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{
    clamp_growth, optimal_step_size, ControllerConfig, Reason, Run, RunFailure, RunRecord, StepRecord, Strategy,
};
use crate::error::{Result, SdcError};
use crate::problems::Problem;
use crate::scalar::{max_diff, Scalar};
use crate::sweeper::{SweepState, Sweeper};

/// `N` consecutive steps of equal size iterated together.
#[derive(Debug, Clone)]
pub struct Block<T> {
    pub dt: f64,
    pub steps: Vec<SweepState<T>>,
    pub k: usize,
}

impl<T: Scalar> Block<T> {
    /// All steps and nodes start from the incoming value.
    pub fn new<P>(problem: &P, sweeper: &Sweeper, t0: f64, dt: f64, n: usize, u0: &[T]) -> Result<Self>
    where
        P: Problem<Scalar = T> + ?Sized,
    {
        if n == 0 {
            return Err(SdcError::invalid("block needs at least one step"));
        }
        let steps = (0..n)
            .map(|j| sweeper.initial_state(problem, t0 + j as f64 * dt, dt, u0))
            .collect::<Result<Vec<_>>>()?;
        Ok(Block { dt, steps, k: 0 })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Largest residual over the steps of the block.
    pub fn residual(&self) -> f64 {
        self.steps.iter().map(|s| s.residual).fold(0.0, f64::max)
    }
}

fn in_step(j: usize, e: SdcError) -> SdcError {
    match e {
        SdcError::NonFinite(what) => SdcError::Aborted { t: f64::NAN, reason: format!("step {j}: non-finite {what}") },
        SdcError::SolverFailure(msg) => SdcError::SolverFailure(format!("step {j}: {msg}")),
        other => other,
    }
}

/// One block iteration, steps in order.
pub fn gssdc_iterate<P>(problem: &P, sweeper: &Sweeper, block: &mut Block<P::Scalar>) -> Result<()>
where
    P: Problem + ?Sized,
{
    let quad = sweeper.quad();
    for j in 0..block.steps.len() {
        if j > 0 {
            let incoming = block.steps[j - 1].end_value(quad);
            block.steps[j].set_initial_value(&incoming, quad);
        }
        sweeper.sweep(problem, &mut block.steps[j]).map_err(|e| in_step(j, e))?;
    }
    block.k += 1;
    Ok(())
}

/// `iterations` block iterations with one thread per step. Step `j` runs its
/// sweep `k` while step `j + 1` may still be in sweep `k - 1`.
pub fn gssdc_iterate_pipelined<P>(
    problem: &P,
    sweeper: &Sweeper,
    block: &mut Block<P::Scalar>,
    iterations: usize,
) -> Result<()>
where
    P: Problem + ?Sized,
{
    let quad = sweeper.quad();
    let n = block.steps.len();
    let mut senders = Vec::with_capacity(n);
    let mut receivers = Vec::with_capacity(n);
    for _ in 0..n {
        let (tx, rx) = mpsc::channel::<Option<Vec<P::Scalar>>>();
        senders.push(Some(tx));
        receivers.push(Some(rx));
    }
    let results: Vec<Result<()>> = std::thread::scope(|scope| {
        let handles: Vec<_> = block
            .steps
            .iter_mut()
            .enumerate()
            .map(|(j, state)| {
                // step j reads from channel j and writes to channel j + 1
                let rx = if j > 0 { receivers[j].take() } else { None };
                let tx = senders.get_mut(j + 1).and_then(Option::take);
                scope.spawn(move || -> Result<()> {
                    for _ in 0..iterations {
                        if let Some(rx) = &rx {
                            match rx.recv() {
                                Ok(Some(u0)) => state.set_initial_value(&u0, quad),
                                _ => return Ok(()),
                            }
                        }
                        if let Err(e) = sweeper.sweep(problem, state) {
                            if let Some(tx) = &tx {
                                let _ = tx.send(None);
                            }
                            return Err(in_step(j, e));
                        }
                        if let Some(tx) = &tx {
                            let _ = tx.send(Some(state.end_value(quad)));
                        }
                    }
                    Ok(())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(SdcError::SolverFailure("worker panicked".into()))))
            .collect()
    });
    for r in results {
        r?;
    }
    block.k += iterations;
    Ok(())
}

/// Settings of the block integrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockConfig {
    pub steps: usize,
    pub pipelined: bool,
}

impl Default for BlockConfig {
    fn default() -> Self {
        BlockConfig { steps: 4, pipelined: false }
    }
}

/// Run `config.k_max` block iterations on a fresh block and return the
/// per-step increments of the last iteration.
fn solve_block<P>(
    problem: &P,
    sweeper: &Sweeper,
    config: &ControllerConfig,
    block_cfg: &BlockConfig,
    block: &mut Block<P::Scalar>,
) -> Result<Vec<f64>>
where
    P: Problem + ?Sized,
{
    let last = sweeper.m() - 1;
    if config.k_max > 1 {
        if block_cfg.pipelined {
            gssdc_iterate_pipelined(problem, sweeper, block, config.k_max - 1)?;
        } else {
            for _ in 0..config.k_max - 1 {
                gssdc_iterate(problem, sweeper, block)?;
            }
        }
    }
    let before: Vec<Vec<P::Scalar>> = block.steps.iter().map(|s| s.u[last].clone()).collect();
    gssdc_iterate(problem, sweeper, block)?;
    Ok(block.steps.iter().zip(&before).map(|(s, b)| max_diff(&s.u[last], b)).collect())
}

/// Integrate with blocks of `block_cfg.steps` steps. With the fixed strategy
/// every block is accepted; with Δt-adaptivity every step of a block must
/// meet the tolerance and the block restarts from the first step that does
/// not, keeping the steps before it.
pub fn integrate_gssdc<P>(
    problem: &P,
    sweeper: &Sweeper,
    config: &ControllerConfig,
    block_cfg: &BlockConfig,
    t0: f64,
    t_end: f64,
    u0: &[P::Scalar],
) -> std::result::Result<Run<P::Scalar>, Box<RunFailure>>
where
    P: Problem + ?Sized,
{
    let started = Instant::now();
    let mut steps: Vec<StepRecord> = Vec::new();
    let fail = |error: SdcError, steps: Vec<StepRecord>| {
        let record = RunRecord::from_steps(steps, t0, t_end, started.elapsed().as_secs_f64());
        Box::new(RunFailure { error, record })
    };
    if let Err(e) = config.validate() {
        return Err(fail(e, steps));
    }
    if !matches!(config.strategy, Strategy::Fixed | Strategy::DtAdaptive) {
        return Err(fail(SdcError::Config("block iteration supports fixed and dt-adaptive".into()), steps));
    }
    if block_cfg.steps == 0 || !(t_end > t0) {
        return Err(fail(SdcError::Config("need block size >= 1 and t_end > t0".into()), steps));
    }
    let n = block_cfg.steps;
    let adaptive = config.strategy == Strategy::DtAdaptive;
    let span = t_end - t0;
    let quad = sweeper.quad();
    let mut t = t0;
    let mut u = u0.to_vec();
    let mut dt = config.dt_init;
    let mut restarts = 0usize;
    while t < t_end {
        let remaining = t_end - t;
        let snapped = n as f64 * dt >= remaining * (1.0 - 1e-10);
        let dt_block = if snapped { remaining / n as f64 } else { dt };
        if dt_block <= 1e-14 * span.max(t.abs()) {
            let e = SdcError::Aborted { t, reason: format!("step size underflow (dt = {dt_block:e})") };
            return Err(fail(e, steps));
        }
        let attempt = Block::new(problem, sweeper, t, dt_block, n, &u).and_then(|mut block| {
            let eps = solve_block(problem, sweeper, config, block_cfg, &mut block)?;
            Ok((block, eps))
        });
        let (block, eps) = match attempt {
            Ok(x) => x,
            Err(e) => {
                let e = match e {
                    SdcError::Aborted { reason, .. } => SdcError::Aborted { t, reason },
                    other => SdcError::Aborted { t, reason: other.to_string() },
                };
                return Err(fail(e, steps));
            }
        };
        if eps.iter().any(|e| e.is_nan()) {
            return Err(fail(SdcError::Aborted { t, reason: "non-finite error estimate".into() }, steps));
        }
        let offender = if adaptive { eps.iter().position(|&e| e > config.eps_tol) } else { None };
        let kept = offender.unwrap_or(n);
        for (j, (state, &e)) in block.steps.iter().zip(&eps).enumerate() {
            let accepted = j < kept;
            steps.push(StepRecord {
                step_index: steps.len(),
                t: state.t,
                dt: dt_block,
                k: state.k,
                eps: e,
                residual: state.residual,
                accepted,
                restart_reason: (!accepted).then_some(Reason::ErrorExceedsTolerance),
                newton_iters: state.newton_count,
            });
        }
        if kept > 0 {
            u = block.steps[kept - 1].end_value(quad);
            t = if kept == n && snapped { t_end } else { t + kept as f64 * dt_block };
        }
        dt = if adaptive {
            let e = match offender {
                Some(j) => eps[j],
                None => eps.iter().copied().fold(0.0, f64::max),
            };
            let candidate = optimal_step_size(e, config.eps_tol, dt_block, config.k_max, config.beta);
            clamp_growth(
                candidate,
                dt_block,
                config.gamma,
                config.dt_min.unwrap_or(0.0),
                config.dt_max.unwrap_or(f64::INFINITY),
            )
        } else {
            dt_block
        };
        if offender.is_some() {
            restarts += 1;
            if restarts > config.restart_budget {
                return Err(fail(SdcError::Aborted { t, reason: "restart budget exhausted".into() }, steps));
            }
        }
    }
    let wall = started.elapsed().as_secs_f64();
    Ok(Run { record: RunRecord::from_steps(steps, t0, t_end, wall), state: u })
}

/// Telemetry of a node-parallel sweep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelReport {
    /// Number of node solves that could run at the same time.
    pub width: usize,
    /// Node solves executed by each pool worker.
    pub solves_per_worker: Vec<usize>,
}

/// Worker pool for node-parallel sweeps that counts the solves each worker
/// executes.
#[derive(Debug)]
pub struct NodePool {
    pool: rayon::ThreadPool,
    solves: Vec<AtomicUsize>,
}

impl NodePool {
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(SdcError::invalid("need at least one worker"));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .thread_name(|i| format!("sdc-node-{i}"))
            .build()
            .map_err(|e| SdcError::invalid(format!("cannot start worker pool: {e}")))?;
        Ok(NodePool { pool, solves: (0..workers).map(|_| AtomicUsize::new(0)).collect() })
    }

    pub fn workers(&self) -> usize {
        self.solves.len()
    }

    pub fn thread_pool(&self) -> &rayon::ThreadPool {
        &self.pool
    }

    /// Node solves per worker since construction.
    pub fn solves_per_worker(&self) -> Vec<usize> {
        self.solves.iter().map(|c| c.load(Ordering::Relaxed)).collect()
    }

    pub fn sweep<P>(&self, problem: &P, sweeper: &Sweeper, state: &mut SweepState<P::Scalar>) -> Result<ParallelReport>
    where
        P: Problem + ?Sized,
    {
        let report = node_parallel_sweep(problem, sweeper, state, &self.pool)?;
        for (c, &n) in self.solves.iter().zip(&report.solves_per_worker) {
            c.fetch_add(n, Ordering::Relaxed);
        }
        Ok(report)
    }
}

/// One sweep with the `M` node solves dispatched to `pool`. Needs a diagonal
/// implicit preconditioner and no explicit coupling between nodes; the result
/// is bitwise identical to [`Sweeper::sweep`].
pub fn node_parallel_sweep<P>(
    problem: &P,
    sweeper: &Sweeper,
    state: &mut SweepState<P::Scalar>,
    pool: &rayon::ThreadPool,
) -> Result<ParallelReport>
where
    P: Problem + ?Sized,
{
    if !sweeper.nodes_independent() {
        return Err(SdcError::invalid("node-parallel sweeps need a diagonal preconditioner"));
    }
    let m = sweeper.m();
    let plan = sweeper.plan(state);
    let shared: &SweepState<P::Scalar> = state;
    let updates: Vec<(Result<_>, Option<usize>)> = pool.install(|| {
        plan.base
            .into_par_iter()
            .enumerate()
            .map(|(node, rhs)| (sweeper.solve_node(problem, shared, node, rhs), rayon::current_thread_index()))
            .collect()
    });
    let mut solves_per_worker = vec![0; pool.current_num_threads()];
    let mut collected = Vec::with_capacity(m);
    for (up, worker) in updates {
        if let Some(w) = worker {
            solves_per_worker[w] += 1;
        }
        collected.push(up?);
    }
    for (node, up) in collected.into_iter().enumerate() {
        Sweeper::apply_update(state, node, up);
    }
    sweeper.finish_sweep(problem, state)?;
    Ok(ParallelReport { width: m.min(pool.current_num_threads()), solves_per_worker })
}
