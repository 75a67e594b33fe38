//! SDC sweeps, residuals and the two local-error estimates.
//!
//! One sweep applies
//!
//! ```text
//! (I - Δt Q_Δ F)(u^{k+1}) = u0 + Δt (Q - Q_Δ) F(u^k)
//! ```
//!
//! node by node through forward substitution. For split problems the
//! implicit part uses `Q_Δ` and the explicit part a second table `Q̃_E`
//! without diagonal.

mod precond;

pub use precond::{
    build_qdelta_explicit_euler, build_qdelta_implicit_euler, build_qdelta_lu,
    build_qdelta_min_sr_s, spectral_radius, stiff_limit_matrix, PrecondKind, Preconditioner,
};

use std::sync::Arc;

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::collocation::{Barycentric, NodeFamily, NodeSet, QuadratureTable};
use crate::error::{Result, SdcError};
use crate::pint::NodePool;
use crate::problems::{Problem, SolveOptions};
use crate::scalar::{all_finite, axpy, max_diff, max_norm, Scalar};

/// Accuracy of the implicit solves inside a sweep.
///
/// With `ratio` set the inner tolerance follows the current SDC residual,
/// `tol = ratio · r`, never below `tol`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerSolve {
    pub ratio: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl InnerSolve {
    pub fn exact() -> Self {
        InnerSolve { ratio: None, tol: 1e-14, max_iter: 50 }
    }

    pub fn relative(ratio: f64, max_iter: usize) -> Self {
        InnerSolve { ratio: Some(ratio), tol: 1e-15, max_iter }
    }

    fn options(&self, residual: f64) -> SolveOptions {
        let tol = match self.ratio {
            Some(r) if residual.is_finite() => (r * residual).max(self.tol),
            _ => self.tol,
        };
        SolveOptions { tol, max_iter: self.max_iter }
    }
}

impl Default for InnerSolve {
    fn default() -> Self {
        InnerSolve::exact()
    }
}

/// Iterate of one time step: node values with cached right-hand sides.
#[derive(Debug, Clone)]
pub struct SweepState<T> {
    pub t: f64,
    pub dt: f64,
    pub u0: Vec<T>,
    pub u: Vec<Vec<T>>,
    f_imp: Vec<Vec<T>>,
    /// Empty unless the problem is split.
    f_exp: Vec<Vec<T>>,
    pub k: usize,
    pub residual: f64,
    pub residual_prev: f64,
    pub newton_count: usize,
}

impl<T: Scalar> SweepState<T> {
    /// Start from `u0` copied to every node.
    pub fn new<P>(problem: &P, quad: &QuadratureTable, t: f64, dt: f64, u0: &[T]) -> Result<Self>
    where
        P: Problem<Scalar = T> + ?Sized,
    {
        let guess = vec![u0.to_vec(); quad.m()];
        Self::with_guess(problem, quad, t, dt, u0, guess)
    }

    /// Start from the given node values.
    pub fn with_guess<P>(
        problem: &P,
        quad: &QuadratureTable,
        t: f64,
        dt: f64,
        u0: &[T],
        guess: Vec<Vec<T>>,
    ) -> Result<Self>
    where
        P: Problem<Scalar = T> + ?Sized,
    {
        if guess.len() != quad.m() || guess.iter().any(|g| g.len() != u0.len()) {
            return Err(SdcError::invalid("initial guess does not match nodes and state"));
        }
        let m = quad.m();
        let dim = u0.len();
        let mut state = SweepState {
            t,
            dt,
            u0: u0.to_vec(),
            u: guess,
            f_imp: vec![vec![T::zero(); dim]; m],
            f_exp: if problem.is_split() { vec![vec![T::zero(); dim]; m] } else { Vec::new() },
            k: 0,
            residual: f64::INFINITY,
            residual_prev: f64::INFINITY,
            newton_count: 0,
        };
        for node in 0..m {
            state.refresh_node(problem, quad, node);
        }
        state.residual = state.compute_residual(quad);
        Ok(state)
    }

    pub fn m(&self) -> usize {
        self.u.len()
    }

    pub fn is_split(&self) -> bool {
        !self.f_exp.is_empty()
    }

    fn node_time(&self, quad: &QuadratureTable, node: usize) -> f64 {
        self.t + self.dt * quad.tau()[node]
    }

    fn refresh_node<P>(&mut self, problem: &P, quad: &QuadratureTable, node: usize)
    where
        P: Problem<Scalar = T> + ?Sized,
    {
        let t = self.node_time(quad, node);
        if self.is_split() {
            problem.eval_split(&self.u[node], t, &mut self.f_imp[node], &mut self.f_exp[node]);
        } else {
            problem.eval_rhs(&self.u[node], t, &mut self.f_imp[node]);
        }
    }

    /// Full right-hand side `F(u_m)` from the cache.
    pub fn rhs(&self, node: usize) -> Vec<T> {
        let mut f = self.f_imp[node].clone();
        if self.is_split() {
            axpy(1.0, &self.f_exp[node], &mut f);
        }
        f
    }

    /// `u0 + Δt Σ_j q_mj F_j` for one node.
    fn picard_value(&self, quad: &QuadratureTable, node: usize) -> Vec<T> {
        let q = quad.q();
        let mut v = self.u0.clone();
        for j in 0..self.m() {
            let w = self.dt * q[(node, j)];
            if w != 0.0 {
                axpy(w, &self.f_imp[j], &mut v);
                if self.is_split() {
                    axpy(w, &self.f_exp[j], &mut v);
                }
            }
        }
        v
    }

    /// `‖u0 + Δt Q F(u) - u‖∞` over nodes and components, from the cache.
    pub fn compute_residual(&self, quad: &QuadratureTable) -> f64 {
        let mut r = 0.0_f64;
        for node in 0..self.m() {
            let d = max_diff(&self.picard_value(quad, node), &self.u[node]);
            if d.is_nan() {
                return f64::NAN;
            }
            r = r.max(d);
        }
        r
    }

    /// Solution at the end of the step: the last node when it sits at the
    /// right end, otherwise the collocation update with the full-interval
    /// weights.
    pub fn end_value(&self, quad: &QuadratureTable) -> Vec<T> {
        if quad.nodes().includes_right_end() {
            return self.u[self.m() - 1].clone();
        }
        let mut v = self.u0.clone();
        for (j, &w) in quad.end_weights().iter().enumerate() {
            axpy(self.dt * w, &self.f_imp[j], &mut v);
            if self.is_split() {
                axpy(self.dt * w, &self.f_exp[j], &mut v);
            }
        }
        v
    }

    /// Replace the initial value, keeping node values. Used by block
    /// iterations where the incoming value changes between sweeps.
    pub fn set_initial_value(&mut self, u0: &[T], quad: &QuadratureTable) {
        self.u0.copy_from_slice(u0);
        self.residual = self.compute_residual(quad);
    }

    #[cfg(debug_assertions)]
    fn check_cache<P>(&self, problem: &P, quad: &QuadratureTable)
    where
        P: Problem<Scalar = T> + ?Sized,
    {
        if problem.dim() > 64 {
            return;
        }
        let mut fresh = self.clone();
        for node in 0..self.m() {
            fresh.refresh_node(problem, quad, node);
        }
        debug_assert!(fresh.f_imp == self.f_imp && fresh.f_exp == self.f_exp);
    }
}

/// Per-node work of one sweep: the right-hand side of the node equation is
/// `base_m + Δt Σ_{j<m} (qI_mj fI_j + qE_mj fE_j)` with new values `j < m`.
pub(crate) struct SweepPlan<T> {
    pub base: Vec<Vec<T>>,
}

/// The SDC method: quadrature plus implicit and explicit preconditioners and
/// the inner-solve policy.
#[derive(Debug, Clone)]
pub struct Sweeper {
    quad: QuadratureTable,
    implicit: Preconditioner,
    explicit: Preconditioner,
    inner: InnerSolve,
    pool: Option<Arc<NodePool>>,
}

impl Sweeper {
    /// Explicit table defaults to node-to-node forward Euler, or to zero when
    /// the implicit table is diagonal so that nodes stay independent.
    pub fn new(family: NodeFamily, m: usize, kind: PrecondKind) -> Result<Self> {
        let quad = QuadratureTable::new(family, m)?;
        let implicit = Preconditioner::build(kind, &quad)?;
        let explicit = if implicit.is_diagonal() {
            Preconditioner::zero(m)
        } else {
            build_qdelta_explicit_euler(quad.nodes())
        };
        Ok(Sweeper { quad, implicit, explicit, inner: InnerSolve::exact(), pool: None })
    }

    pub fn from_parts(
        quad: QuadratureTable,
        implicit: Preconditioner,
        explicit: Preconditioner,
        inner: InnerSolve,
    ) -> Result<Self> {
        let m = quad.m();
        if implicit.matrix().nrows() != m || explicit.matrix().nrows() != m {
            return Err(SdcError::invalid("preconditioner size does not match the nodes"));
        }
        if (0..m).any(|i| explicit.matrix()[(i, i)] != 0.0) {
            return Err(SdcError::invalid("explicit preconditioner must have a zero diagonal"));
        }
        Ok(Sweeper { quad, implicit, explicit, inner, pool: None })
    }

    pub fn with_inner(mut self, inner: InnerSolve) -> Self {
        self.inner = inner;
        self
    }

    /// Dispatch node solves to `pool` whenever they are independent.
    pub fn with_pool(mut self, pool: Arc<NodePool>) -> Self {
        self.pool = Some(pool);
        self
    }

    pub fn pool(&self) -> Option<&NodePool> {
        self.pool.as_deref()
    }

    pub fn quad(&self) -> &QuadratureTable {
        &self.quad
    }

    pub fn nodes(&self) -> &NodeSet {
        self.quad.nodes()
    }

    pub fn m(&self) -> usize {
        self.quad.m()
    }

    pub fn implicit(&self) -> &Preconditioner {
        &self.implicit
    }

    pub fn explicit(&self) -> &Preconditioner {
        &self.explicit
    }

    pub fn inner(&self) -> &InnerSolve {
        &self.inner
    }

    /// Whether the node solves of a sweep are mutually independent.
    pub fn nodes_independent(&self) -> bool {
        self.implicit.is_diagonal() && !self.explicit.has_lower_coupling()
    }

    pub fn initial_state<P>(&self, problem: &P, t: f64, dt: f64, u0: &[P::Scalar]) -> Result<SweepState<P::Scalar>>
    where
        P: Problem + ?Sized,
    {
        SweepState::new(problem, &self.quad, t, dt, u0)
    }

    pub(crate) fn plan<T: Scalar>(&self, state: &SweepState<T>) -> SweepPlan<T> {
        let m = self.m();
        let q = self.quad.q();
        let qi = self.implicit.matrix();
        let qe = self.explicit.matrix();
        let split = state.is_split();
        let base = (0..m)
            .map(|node| {
                let mut v = state.u0.clone();
                for j in 0..m {
                    let wi = state.dt * (q[(node, j)] - qi[(node, j)]);
                    if wi != 0.0 {
                        axpy(wi, &state.f_imp[j], &mut v);
                    }
                    if split {
                        let we = state.dt * (q[(node, j)] - qe[(node, j)]);
                        if we != 0.0 {
                            axpy(we, &state.f_exp[j], &mut v);
                        }
                    }
                }
                v
            })
            .collect();
        SweepPlan { base }
    }

    /// Solve the node equation `u - Δt qI_mm fI(u) = rhs` and evaluate the
    /// right-hand side at the result.
    pub(crate) fn solve_node<P>(
        &self,
        problem: &P,
        state: &SweepState<P::Scalar>,
        node: usize,
        rhs: Vec<P::Scalar>,
    ) -> Result<NodeUpdate<P::Scalar>>
    where
        P: Problem + ?Sized,
    {
        let a = state.dt * self.implicit.matrix()[(node, node)];
        let t = state.node_time(&self.quad, node);
        let (u, iterations) = if a == 0.0 {
            (rhs, 0)
        } else {
            let opts = self.inner.options(state.residual);
            let solved = problem.implicit_solve(a, &rhs, &state.u[node], t, opts)?;
            (solved.u, solved.iterations)
        };
        if !all_finite(&u) {
            return Err(SdcError::NonFinite("node solve"));
        }
        let dim = u.len();
        let mut f_imp = vec![P::Scalar::zero(); dim];
        let f_exp = if state.is_split() {
            let mut f_exp = vec![P::Scalar::zero(); dim];
            problem.eval_split(&u, t, &mut f_imp, &mut f_exp);
            f_exp
        } else {
            problem.eval_rhs(&u, t, &mut f_imp);
            Vec::new()
        };
        Ok(NodeUpdate { u, f_imp, f_exp, iterations })
    }

    pub(crate) fn apply_update<T: Scalar>(state: &mut SweepState<T>, node: usize, up: NodeUpdate<T>) {
        state.u[node] = up.u;
        state.f_imp[node] = up.f_imp;
        if state.is_split() {
            state.f_exp[node] = up.f_exp;
        }
        state.newton_count += up.iterations;
    }

    pub(crate) fn finish_sweep<P>(&self, problem: &P, state: &mut SweepState<P::Scalar>) -> Result<()>
    where
        P: Problem + ?Sized,
    {
        #[cfg(debug_assertions)]
        state.check_cache(problem, &self.quad);
        #[cfg(not(debug_assertions))]
        let _ = problem;
        state.k += 1;
        state.residual_prev = state.residual;
        state.residual = state.compute_residual(&self.quad);
        if !state.residual.is_finite() {
            return Err(SdcError::NonFinite("SDC residual"));
        }
        Ok(())
    }

    /// One SDC sweep by forward substitution.
    pub fn sweep<P>(&self, problem: &P, state: &mut SweepState<P::Scalar>) -> Result<()>
    where
        P: Problem + ?Sized,
    {
        if let Some(pool) = self.pool.as_deref().filter(|_| self.nodes_independent()) {
            return pool.sweep(problem, self, state).map(|_| ());
        }
        let plan = self.plan(state);
        let qi = self.implicit.matrix();
        let qe = self.explicit.matrix();
        for (node, mut rhs) in plan.base.into_iter().enumerate() {
            for j in 0..node {
                let wi = state.dt * qi[(node, j)];
                if wi != 0.0 {
                    axpy(wi, &state.f_imp[j], &mut rhs);
                }
                if state.is_split() {
                    let we = state.dt * qe[(node, j)];
                    if we != 0.0 {
                        axpy(we, &state.f_exp[j], &mut rhs);
                    }
                }
            }
            let up = self.solve_node(problem, state, node, rhs)?;
            Self::apply_update(state, node, up);
        }
        self.finish_sweep(problem, state)
    }

    /// Sweep until the residual drops to `r_tol`.
    ///
    /// Stops without convergence when, after a sweep, the residual exceeds
    /// `r_max`, exceeds the previous residual, or `k_max` sweeps were done.
    /// At least one sweep is always performed.
    pub fn solve_collocation<P>(
        &self,
        problem: &P,
        state: &mut SweepState<P::Scalar>,
        r_tol: f64,
        k_max: usize,
        r_max: f64,
    ) -> Result<CollocationOutcome>
    where
        P: Problem + ?Sized,
    {
        if !(r_tol > 0.0) {
            return Err(SdcError::invalid("residual tolerance must be positive"));
        }
        let mut r_prev = f64::INFINITY;
        loop {
            match self.sweep(problem, state) {
                Ok(()) => {}
                Err(SdcError::NonFinite(_)) | Err(SdcError::SolverFailure(_)) => {
                    state.residual = f64::INFINITY;
                    return Ok(CollocationOutcome::diverged(Divergence::ResidualOverflow));
                }
                Err(e) => return Err(e),
            }
            let r = state.residual;
            if r <= r_tol {
                return Ok(CollocationOutcome { converged: true, reason: None });
            }
            if r > r_max {
                return Ok(CollocationOutcome::diverged(Divergence::ResidualOverflow));
            }
            if r > r_prev {
                return Ok(CollocationOutcome::diverged(Divergence::ResidualIncrease));
            }
            if state.k >= k_max {
                return Ok(CollocationOutcome::diverged(Divergence::MaxIterations));
            }
            r_prev = r;
        }
    }
}

pub(crate) struct NodeUpdate<T> {
    pub u: Vec<T>,
    pub f_imp: Vec<T>,
    pub f_exp: Vec<T>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Divergence {
    ResidualOverflow,
    ResidualIncrease,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CollocationOutcome {
    pub converged: bool,
    pub reason: Option<Divergence>,
}

impl CollocationOutcome {
    fn diverged(reason: Divergence) -> Self {
        CollocationOutcome { converged: false, reason: Some(reason) }
    }
}

/// Increment between two consecutive iterates at the last node.
pub fn increment_error_estimate<T: Scalar>(new: &SweepState<T>, old: &SweepState<T>) -> Result<f64> {
    if new.m() != old.m() || new.u0.len() != old.u0.len() {
        return Err(SdcError::invalid("states differ in shape"));
    }
    let last = new.m() - 1;
    Ok(max_diff(&new.u[last], &old.u[last]))
}

/// Embedded estimate: interpolate through `0` and all nodes except
/// `τ_{M-1}`, evaluate at `τ_{M-1}` and compare with the node value there.
pub fn embedded_node_error_estimate<T: Scalar>(state: &SweepState<T>, nodes: &NodeSet) -> Result<f64> {
    let m = nodes.len();
    if m < 2 || state.m() != m {
        return Err(SdcError::invalid("embedded estimate needs M >= 2 matching nodes"));
    }
    let tau = nodes.nodes();
    let mut points = Vec::with_capacity(m);
    let mut values: Vec<&[T]> = Vec::with_capacity(m);
    if !nodes.includes_left_end() {
        points.push(0.0);
        values.push(&state.u0);
    }
    for i in (0..m).filter(|&i| i != m - 2) {
        points.push(tau[i]);
        values.push(&state.u[i]);
    }
    let approx = Barycentric::new(points).eval(&values, tau[m - 2]);
    Ok(max_diff(&approx, &state.u[m - 2]))
}

/// ‖state‖∞ of all node values, for diagnostics.
pub fn node_norm<T: Scalar>(state: &SweepState<T>) -> f64 {
    state.u.iter().map(|v| max_norm(v)).fold(0.0, f64::max)
}
