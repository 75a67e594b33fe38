//! Benchmark problems and the contract the sweeper relies on.
//!
//! Every problem exposes its right-hand side (optionally split into an
//! implicit and an explicit part) and a solver for the per-node implicit
//! equation `u - a f_I(u, t) = b`.

use crate::error::Result;
use crate::scalar::Scalar;

mod allen_cahn;
mod dahlquist;
mod nls;
mod quench;
pub(crate) mod spectral;
mod vdp;

pub use allen_cahn::{AcInitialProfile, AcParams, AllenCahn};
pub use dahlquist::Dahlquist;
pub use nls::{NlsParams, NonlinearSchroedinger};
pub use quench::{Quench, QuenchParams};
pub use vdp::{VanDerPol, VdpParams};

/// Tolerance and iteration cap handed to an implicit solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
}

/// Result of an implicit solve. Hitting `max_iter` without reaching `tol`
/// is not an error; `converged` reports it.
#[derive(Debug, Clone)]
pub struct Solved<T> {
    pub u: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

pub trait Problem: Send + Sync {
    type Scalar: Scalar;

    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn initial_state(&self) -> Vec<Self::Scalar>;

    /// Full right-hand side `f(u, t)`.
    fn eval_rhs(&self, u: &[Self::Scalar], t: f64, out: &mut [Self::Scalar]);

    /// Whether the problem is integrated with an implicit/explicit split.
    fn is_split(&self) -> bool {
        false
    }

    /// Split evaluation; implicit + explicit equals the full right-hand side.
    fn eval_split(
        &self,
        u: &[Self::Scalar],
        t: f64,
        implicit: &mut [Self::Scalar],
        explicit: &mut [Self::Scalar],
    ) {
        self.eval_rhs(u, t, implicit);
        explicit.iter_mut().for_each(|x| *x = Self::Scalar::zero());
    }

    /// Solve `u - a f_I(u, t) = b` starting from `guess`.
    fn implicit_solve(
        &self,
        a: f64,
        b: &[Self::Scalar],
        guess: &[Self::Scalar],
        t: f64,
        opts: SolveOptions,
    ) -> Result<Solved<Self::Scalar>>;

    /// Closed-form solution, when one exists.
    fn exact(&self, _t: f64) -> Option<Vec<Self::Scalar>> {
        None
    }
}

use num_traits::Zero as _;

/// Smallest tolerance an iterative solve should be asked for, relative to
/// the magnitude of its data.
pub(crate) fn tolerance_floor<T: Scalar>(b: &[T]) -> f64 {
    8.0 * f64::EPSILON * crate::scalar::max_norm(b).max(1.0)
}

/// Thomas algorithm for a tridiagonal system; `lower[0]` and
/// `upper[n-1]` are ignored. Returns `None` on a zero pivot.
pub(crate) fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut piv = diag[0];
    if piv == 0.0 {
        return None;
    }
    c[0] = upper[0] / piv;
    d[0] = rhs[0] / piv;
    for i in 1..n {
        piv = diag[i] - lower[i] * c[i - 1];
        if piv == 0.0 || !piv.is_finite() {
            return None;
        }
        c[i] = if i + 1 < n { upper[i] / piv } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / piv;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Some(x)
}
