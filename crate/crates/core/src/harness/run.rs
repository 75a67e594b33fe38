use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use super::config::{MethodConfig, Preset, ProblemParams, RunConfig};
use crate::controller::{integrate, integrate_observed, ControllerConfig, Run, RunFailure, RunRecord};
use crate::error::{Result, SdcError};
use crate::pint::{integrate_gssdc, BlockConfig, NodePool};
use crate::problems::{AllenCahn, Dahlquist, NonlinearSchroedinger, Problem, Quench, VanDerPol};
use crate::scalar::{max_diff, Scalar};
use crate::sweeper::Sweeper;

/// A constructed benchmark problem.
#[derive(Debug)]
pub enum Instance {
    Dahlquist(Dahlquist),
    Vdp(VanDerPol),
    Quench(Quench),
    Nls(NonlinearSchroedinger),
    AllenCahn(AllenCahn),
}

macro_rules! with_problem {
    ($inst:expr, $p:ident => $body:expr) => {
        match $inst {
            Instance::Dahlquist($p) => $body,
            Instance::Vdp($p) => $body,
            Instance::Quench($p) => $body,
            Instance::Nls($p) => $body,
            Instance::AllenCahn($p) => $body,
        }
    };
}

impl Instance {
    pub fn new(params: &ProblemParams) -> Result<Self> {
        Ok(match *params {
            ProblemParams::Dahlquist(p) => Instance::Dahlquist(Dahlquist::new(p.lambda)),
            ProblemParams::Vdp(p) => Instance::Vdp(VanDerPol::new(p)?),
            ProblemParams::Quench(p) => Instance::Quench(Quench::new(p)?),
            ProblemParams::Nls(p) => Instance::Nls(NonlinearSchroedinger::new(p)?),
            ProblemParams::AllenCahn(p) => Instance::AllenCahn(AllenCahn::new(p)?),
        })
    }

    /// Grid shape and the extent of each axis.
    pub fn layout(&self) -> (Vec<usize>, Vec<[f64; 2]>) {
        match self {
            Instance::Dahlquist(_) => (vec![1], vec![]),
            Instance::Vdp(_) => (vec![2], vec![]),
            Instance::Quench(q) => (vec![q.params().n], vec![[0.0, 1.0]]),
            Instance::Nls(p) => {
                let period = 2.0 * std::f64::consts::PI;
                (vec![p.n(), p.n()], vec![[0.0, period], [0.0, period]])
            }
            Instance::AllenCahn(a) => {
                let n = a.params().n;
                (vec![n, n], vec![[-0.5, 0.5], [-0.5, 0.5]])
            }
        }
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, Instance::Nls(_))
    }

    pub fn initial_state(&self) -> Vec<f64> {
        with_problem!(self, p => flatten(&p.initial_state()))
    }
}

/// Real view of a state: complex entries are stored as `(re, im)` pairs.
pub fn flatten<T: Scalar>(v: &[T]) -> Vec<f64> {
    if T::IS_COMPLEX {
        v.iter().flat_map(|x| [x.re(), x.im()]).collect()
    } else {
        v.iter().map(|x| x.re()).collect()
    }
}

/// `‖a - b‖∞ / ‖b‖∞` on flattened states.
pub fn relative_error(a: &[f64], b: &[f64], complex: bool) -> f64 {
    let width = if complex { 2 } else { 1 };
    let mut diff: f64 = 0.0;
    let mut norm: f64 = 0.0;
    for (x, y) in a.chunks(width).zip(b.chunks(width)) {
        let d = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        let m = y.iter().map(|q| q * q).sum::<f64>().sqrt();
        diff = if d.is_nan() { f64::NAN } else { diff.max(d) };
        norm = norm.max(m);
    }
    if norm > 0.0 {
        diff / norm
    } else {
        diff
    }
}

pub fn build_sweeper(method: &MethodConfig, pool: Option<Arc<NodePool>>) -> Result<Sweeper> {
    let sweeper = Sweeper::new(method.nodes, method.m, method.preconditioner)?.with_inner(method.inner());
    Ok(match pool {
        Some(p) => sweeper.with_pool(p),
        None => sweeper,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Completed,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Field {
    Real,
    Complex,
}

/// Final state with the metadata needed to plot it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub preset: Preset,
    pub t: f64,
    pub shape: Vec<usize>,
    pub field: Field,
    /// `[lo, hi)` per axis; empty for ODEs.
    pub domain: Vec<[f64; 2]>,
    #[serde(skip)]
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config: RunConfig,
    pub record: RunRecord,
    pub status: Status,
    pub message: Option<String>,
    /// Time reached by the accepted steps.
    pub final_t: f64,
    pub snapshot: Option<Snapshot>,
    pub solves_per_worker: Option<Vec<usize>>,
}

impl RunOutcome {
    pub fn completed(&self) -> bool {
        self.status == Status::Completed
    }
}

type RunResult<T> = std::result::Result<Run<T>, Box<RunFailure>>;

fn dispatch_run<P: Problem>(
    problem: &P,
    sweeper: &Sweeper,
    controller: &ControllerConfig,
    cfg: &RunConfig,
) -> RunResult<P::Scalar> {
    let u0 = problem.initial_state();
    if cfg.pint.block_steps > 1 {
        let block = BlockConfig { steps: cfg.pint.block_steps, pipelined: cfg.pint.pipelined };
        integrate_gssdc(problem, sweeper, controller, &block, cfg.t0, cfg.t_end, &u0)
    } else {
        integrate(problem, sweeper, controller, cfg.t0, cfg.t_end, &u0)
    }
}

fn run_flat<P: Problem>(
    problem: &P,
    sweeper: &Sweeper,
    controller: &ControllerConfig,
    cfg: &RunConfig,
) -> std::result::Result<(RunRecord, Vec<f64>), Box<RunFailure>> {
    dispatch_run(problem, sweeper, controller, cfg).map(|run| (run.record, flatten(&run.state)))
}

fn exact_flat<P: Problem>(problem: &P, t: f64) -> Option<Vec<f64>> {
    problem.exact(t).map(|u| flatten(&u))
}

/// Execute a run. Setup problems are errors; an aborted integration is
/// reported through [`RunOutcome::status`].
pub fn execute(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let instance = Instance::new(&cfg.problem)?;
    let pool = match cfg.pint.workers {
        1 => None,
        w => Some(Arc::new(NodePool::new(w)?)),
    };
    let sweeper = build_sweeper(&cfg.method, pool.clone())?;
    let result = with_problem!(&instance, p => run_flat(p, &sweeper, &cfg.controller, cfg));
    let (shape, domain) = instance.layout();
    let field = if instance.is_complex() { Field::Complex } else { Field::Real };
    let solves_per_worker = pool.as_ref().map(|p| p.solves_per_worker());
    match result {
        Ok((mut record, state)) => {
            if cfg.output.global_error {
                let reference = reference_solution(cfg, &instance)?;
                record.final_error = Some(relative_error(&state, &reference, instance.is_complex()));
            }
            Ok(RunOutcome {
                config: cfg.clone(),
                record,
                status: Status::Completed,
                message: None,
                final_t: cfg.t_end,
                snapshot: Some(Snapshot { preset: cfg.preset, t: cfg.t_end, shape, field, domain, values: state }),
                solves_per_worker,
            })
        }
        Err(failure) => {
            let final_t = cfg.t0 + failure.record.accepted().map(|s| s.dt).sum::<f64>();
            log::warn!("{} run aborted: {}", cfg.preset, failure.error);
            Ok(RunOutcome {
                config: cfg.clone(),
                record: failure.record,
                status: Status::Aborted,
                message: Some(failure.error.to_string()),
                final_t,
                snapshot: None,
                solves_per_worker,
            })
        }
    }
}

fn reference_cache() -> &'static Mutex<HashMap<String, Arc<Vec<f64>>>> {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<Vec<f64>>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Solution at `t_end`: the closed form when the problem has one, else a
/// tight-tolerance run described by `cfg.reference`, cached per process.
pub fn reference_solution(cfg: &RunConfig, instance: &Instance) -> Result<Arc<Vec<f64>>> {
    if let Some(u) = with_problem!(instance, p => exact_flat(p, cfg.t_end)) {
        return Ok(Arc::new(u));
    }
    let key = serde_json::to_string(&(&cfg.problem, cfg.t0, cfg.t_end, &cfg.reference))
        .map_err(|e| SdcError::Config(e.to_string()))?;
    if let Some(u) = reference_cache().lock().map_err(|_| poisoned())?.get(&key) {
        return Ok(u.clone());
    }
    let sweeper = build_sweeper(&cfg.reference.method, None)?;
    let mut ref_cfg = cfg.clone();
    ref_cfg.pint = Default::default();
    let (_, u) = with_problem!(instance, p => run_flat(p, &sweeper, &cfg.reference.controller, &ref_cfg))
        .map_err(|f| SdcError::Aborted { t: cfg.t_end, reason: format!("reference run failed: {}", f.error) })?;
    let u = Arc::new(u);
    reference_cache().lock().map_err(|_| poisoned())?.insert(key, u.clone());
    Ok(u)
}

/// Local error of one accepted step against a tight solve over the same
/// interval from the same initial value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalError {
    pub t: f64,
    pub dt: f64,
    pub error: f64,
}

fn local_errors_of<P: Problem>(
    problem: &P,
    cfg: &RunConfig,
    sweeper: &Sweeper,
    reference: &Sweeper,
) -> Result<(RunRecord, Vec<LocalError>)> {
    let mut errors = Vec::new();
    let mut failure = None;
    let observer = |rec: &crate::controller::StepRecord, start: &[P::Scalar], end: Option<&[P::Scalar]>| {
        let Some(end) = end else { return };
        if failure.is_some() {
            return;
        }
        let mut c = cfg.reference.controller.clone();
        c.dt_init = c.dt_init.min(rec.dt);
        match integrate(problem, reference, &c, rec.t, rec.t + rec.dt, start) {
            Ok(r) => errors.push(LocalError { t: rec.t, dt: rec.dt, error: max_diff(end, &r.state) }),
            Err(f) => failure = Some(f.error),
        }
    };
    let run = integrate_observed(problem, sweeper, &cfg.controller, cfg.t0, cfg.t_end, &problem.initial_state(), observer)
        .map_err(|f| f.error)?;
    if let Some(e) = failure {
        return Err(SdcError::Aborted { t: cfg.t0, reason: format!("local reference failed: {e}") });
    }
    Ok((run.record, errors))
}

/// Run serially and measure the local error of every accepted step.
pub fn local_errors(cfg: &RunConfig) -> Result<(RunRecord, Vec<LocalError>)> {
    cfg.validate()?;
    let instance = Instance::new(&cfg.problem)?;
    let sweeper = build_sweeper(&cfg.method, None)?;
    let reference = build_sweeper(&cfg.reference.method, None)?;
    with_problem!(&instance, p => local_errors_of(p, cfg, &sweeper, &reference))
}

fn poisoned() -> SdcError {
    SdcError::SolverFailure("reference cache poisoned".into())
}
