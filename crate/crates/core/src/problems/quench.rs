use serde::{Deserialize, Serialize};

use super::{solve_tridiagonal, tolerance_floor, Problem, SolveOptions, Solved};
use crate::error::{Result, SdcError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuenchParams {
    pub c_v: f64,
    pub kappa: f64,
    pub t_thresh: f64,
    pub t_max: f64,
    pub q_max: f64,
    pub n: usize,
    pub leak_left: f64,
    pub leak_right: f64,
}

impl Default for QuenchParams {
    fn default() -> Self {
        QuenchParams {
            c_v: 1000.0,
            kappa: 1000.0,
            t_thresh: 1e-2,
            t_max: 2e-2,
            q_max: 1.0,
            n: 128,
            leak_left: 0.45,
            leak_right: 0.55,
        }
    }
}

/// 1D heat equation on (0, 1) with a temperature-dependent source and a
/// permanent leak, cell-centred finite differences, Neumann-zero walls.
#[derive(Debug, Clone)]
pub struct Quench {
    params: QuenchParams,
    h: f64,
    leak: Vec<bool>,
}

impl Quench {
    pub fn new(params: QuenchParams) -> Result<Self> {
        if params.n < 8 {
            return Err(SdcError::invalid("quench grid needs at least 8 cells"));
        }
        if !(params.t_thresh < params.t_max) {
            return Err(SdcError::invalid("quench needs t_thresh < t_max"));
        }
        let h = 1.0 / params.n as f64;
        let leak = (0..params.n)
            .map(|i| {
                let x = (i as f64 + 0.5) * h;
                x > params.leak_left && x < params.leak_right
            })
            .collect();
        Ok(Quench { params, h, leak })
    }

    pub fn params(&self) -> &QuenchParams {
        &self.params
    }

    pub fn cell_centers(&self) -> Vec<f64> {
        (0..self.params.n).map(|i| (i as f64 + 0.5) * self.h).collect()
    }

    pub fn is_leak(&self, i: usize) -> bool {
        self.leak[i]
    }

    /// Normalised heating `f(u)` outside the leak.
    pub fn heating(&self, u: f64) -> f64 {
        let p = &self.params;
        if u < p.t_thresh {
            0.0
        } else if u < p.t_max {
            (u - p.t_thresh) / (p.t_max - p.t_thresh)
        } else {
            1.0
        }
    }

    fn source(&self, i: usize, u: f64) -> f64 {
        if self.leak[i] {
            self.params.q_max
        } else {
            self.params.q_max * self.heating(u)
        }
    }

    fn source_derivative(&self, i: usize, u: f64) -> f64 {
        let p = &self.params;
        if !self.leak[i] && u >= p.t_thresh && u < p.t_max {
            p.q_max / (p.t_max - p.t_thresh)
        } else {
            0.0
        }
    }

    fn laplacian_at(&self, u: &[f64], i: usize) -> f64 {
        let n = u.len();
        let left = if i == 0 { u[0] } else { u[i - 1] };
        let right = if i + 1 == n { u[n - 1] } else { u[i + 1] };
        (left - 2.0 * u[i] + right) / (self.h * self.h)
    }

    /// Maximal temperature over the domain.
    pub fn max_temperature(u: &[f64]) -> f64 {
        u.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl Problem for Quench {
    type Scalar = f64;

    fn name(&self) -> &str {
        "quench"
    }

    fn dim(&self) -> usize {
        self.params.n
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![0.0; self.params.n]
    }

    fn eval_rhs(&self, u: &[f64], _t: f64, out: &mut [f64]) {
        let p = &self.params;
        for i in 0..u.len() {
            out[i] = (p.kappa * self.laplacian_at(u, i) + self.source(i, u[i])) / p.c_v;
        }
    }

    /// Newton's method with the tridiagonal Jacobian, solved directly.
    fn implicit_solve(
        &self,
        a: f64,
        b: &[f64],
        guess: &[f64],
        t: f64,
        opts: SolveOptions,
    ) -> Result<Solved<f64>> {
        if a == 0.0 {
            return Ok(Solved { u: b.to_vec(), iterations: 0, converged: true });
        }
        let p = &self.params;
        let n = p.n;
        let tol = opts.tol.max(tolerance_floor(b));
        let coupling = a * p.kappa / (p.c_v * self.h * self.h);
        let mut u = guess.to_vec();
        let mut f = vec![0.0; n];
        let mut g = vec![0.0; n];
        let off = vec![-coupling; n];
        let mut diag = vec![0.0; n];
        let mut iterations = 0;
        let mut perturbed = false;
        loop {
            self.eval_rhs(&u, t, &mut f);
            let mut gnorm = 0.0_f64;
            for i in 0..n {
                g[i] = u[i] - a * f[i] - b[i];
                gnorm = gnorm.max(g[i].abs());
            }
            if !gnorm.is_finite() {
                return Err(SdcError::NonFinite("quench Newton residual"));
            }
            if gnorm <= tol {
                return Ok(Solved { u, iterations, converged: true });
            }
            if iterations >= opts.max_iter {
                return Ok(Solved { u, iterations, converged: false });
            }
            for i in 0..n {
                let walls = if i == 0 || i + 1 == n { 1.0 } else { 2.0 };
                diag[i] = 1.0 + walls * coupling - a * self.source_derivative(i, u[i]) / p.c_v;
                if perturbed {
                    diag[i] += 1e-8;
                }
            }
            let delta = match solve_tridiagonal(&off, &diag, &off, &g) {
                Some(d) => d,
                None if !perturbed => {
                    perturbed = true;
                    continue;
                }
                None => {
                    return Err(SdcError::SolverFailure("singular quench Jacobian".into()))
                }
            };
            for (ui, di) in u.iter_mut().zip(&delta) {
                *ui -= di;
            }
            iterations += 1;
        }
    }
}
