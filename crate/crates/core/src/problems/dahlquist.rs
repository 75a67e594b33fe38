use super::{Problem, SolveOptions, Solved};
use crate::error::Result;

/// Linear test equation `u' = λ u`.
#[derive(Debug, Clone)]
pub struct Dahlquist {
    pub lambda: f64,
    pub u0: f64,
}

impl Dahlquist {
    pub fn new(lambda: f64) -> Self {
        Dahlquist { lambda, u0: 1.0 }
    }
}

impl Problem for Dahlquist {
    type Scalar = f64;

    fn name(&self) -> &str {
        "dahlquist"
    }

    fn dim(&self) -> usize {
        1
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![self.u0]
    }

    fn eval_rhs(&self, u: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = self.lambda * u[0];
    }

    fn implicit_solve(
        &self,
        a: f64,
        b: &[f64],
        _guess: &[f64],
        _t: f64,
        _opts: SolveOptions,
    ) -> Result<Solved<f64>> {
        Ok(Solved {
            u: vec![b[0] / (1.0 - a * self.lambda)],
            iterations: 1,
            converged: true,
        })
    }

    fn exact(&self, t: f64) -> Option<Vec<f64>> {
        Some(vec![self.u0 * (self.lambda * t).exp()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const OPTS: SolveOptions = SolveOptions { tol: 1e-14, max_iter: 1 };

    #[test]
    fn closed_form_solve() {
        let p = Dahlquist::new(-2.0);
        let s = p.implicit_solve(0.25, &[3.0], &[0.0], 0.0, OPTS).unwrap();
        assert_abs_diff_eq!(s.u[0], 3.0 / 1.5, epsilon = 1e-15);
        let s = p.implicit_solve(0.0, &[3.0], &[0.0], 0.0, OPTS).unwrap();
        assert_eq!(s.u[0], 3.0);
    }

    #[test]
    fn exact_solution() {
        assert_eq!(Dahlquist::new(0.0).exact(5.0).unwrap()[0], 1.0);
        assert_abs_diff_eq!(
            Dahlquist::new(-1.0).exact(1.0).unwrap()[0],
            (-1.0f64).exp(),
            epsilon = 1e-16
        );
    }
}
