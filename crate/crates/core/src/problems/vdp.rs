use serde::{Deserialize, Serialize};

use super::{tolerance_floor, Problem, SolveOptions, Solved};
use crate::error::{Result, SdcError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VdpParams {
    pub mu: f64,
    pub u0: f64,
    pub v0: f64,
}

impl Default for VdpParams {
    fn default() -> Self {
        VdpParams { mu: 1000.0, u0: 1.1, v0: 0.0 }
    }
}

/// Van der Pol oscillator as the first-order system `(u, v)' = (v, μ(1-u²)v - u)`.
#[derive(Debug, Clone)]
pub struct VanDerPol {
    params: VdpParams,
}

impl VanDerPol {
    pub fn new(params: VdpParams) -> Result<Self> {
        if !(params.mu >= 0.0) {
            return Err(SdcError::invalid("van der Pol needs mu >= 0"));
        }
        Ok(VanDerPol { params })
    }

    pub fn params(&self) -> &VdpParams {
        &self.params
    }

    #[inline]
    fn rhs(&self, u: f64, v: f64) -> (f64, f64) {
        (v, self.params.mu * (1.0 - u * u) * v - u)
    }

    fn residual(&self, a: f64, b: &[f64], u: f64, v: f64) -> (f64, f64) {
        let (fu, fv) = self.rhs(u, v);
        (u - a * fu - b[0], v - a * fv - b[1])
    }
}

impl Problem for VanDerPol {
    type Scalar = f64;

    fn name(&self) -> &str {
        "vdp"
    }

    fn dim(&self) -> usize {
        2
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![self.params.u0, self.params.v0]
    }

    fn eval_rhs(&self, u: &[f64], _t: f64, out: &mut [f64]) {
        let (fu, fv) = self.rhs(u[0], u[1]);
        out[0] = fu;
        out[1] = fv;
    }

    /// Newton's method with the analytic 2×2 Jacobian.
    fn implicit_solve(
        &self,
        a: f64,
        b: &[f64],
        guess: &[f64],
        _t: f64,
        opts: SolveOptions,
    ) -> Result<Solved<f64>> {
        if a == 0.0 {
            return Ok(Solved { u: b.to_vec(), iterations: 0, converged: true });
        }
        let mu = self.params.mu;
        let tol = opts.tol.max(tolerance_floor(b));
        let (mut u, mut v) = (guess[0], guess[1]);
        let mut iterations = 0;
        let mut perturbed = false;
        loop {
            let (gu, gv) = self.residual(a, b, u, v);
            if !(gu.is_finite() && gv.is_finite()) {
                return Err(SdcError::NonFinite("van der Pol Newton residual"));
            }
            if gu.abs().max(gv.abs()) <= tol {
                return Ok(Solved { u: vec![u, v], iterations, converged: true });
            }
            if iterations >= opts.max_iter {
                return Ok(Solved { u: vec![u, v], iterations, converged: false });
            }
            // J = I - a ∂f/∂(u, v)
            let j11 = 1.0;
            let j12 = -a;
            let mut j21 = -a * (-2.0 * mu * u * v - 1.0);
            let mut j22 = 1.0 - a * mu * (1.0 - u * u);
            let mut det = j11 * j22 - j12 * j21;
            if det.abs() < 1e-300 || !det.is_finite() {
                if perturbed {
                    return Err(SdcError::SolverFailure(
                        "singular van der Pol Jacobian".into(),
                    ));
                }
                perturbed = true;
                j22 += 1e-8;
                j21 += 1e-8;
                det = j11 * j22 - j12 * j21;
            }
            let du = (j22 * gu - j12 * gv) / det;
            let dv = (-j21 * gu + j11 * gv) / det;
            u -= du;
            v -= dv;
            iterations += 1;
        }
    }
}
