use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::spectral::Fft2;
use super::{Problem, SolveOptions, Solved};
use crate::error::{Result, SdcError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NlsParams {
    pub n: usize,
}

impl Default for NlsParams {
    fn default() -> Self {
        NlsParams { n: 64 }
    }
}

/// Focusing nonlinear Schrödinger equation `u_t = iΔu + 2i|u|²u` on the
/// `2π`-periodic square. The Laplacian is the implicit part.
#[derive(Debug)]
pub struct NonlinearSchroedinger {
    n: usize,
    h: f64,
    fft: Fft2,
}

const I: Complex64 = Complex64::new(0.0, 1.0);

impl NonlinearSchroedinger {
    pub fn new(params: NlsParams) -> Result<Self> {
        let n = params.n;
        if n < 4 || !n.is_power_of_two() {
            return Err(SdcError::invalid("NLS grid size must be a power of two >= 4"));
        }
        let period = 2.0 * std::f64::consts::PI;
        Ok(NonlinearSchroedinger { n, h: period / n as f64, fft: Fft2::new(n, period) })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn grid_spacing(&self) -> f64 {
        self.h
    }

    /// `Σ |u|² h²`
    pub fn mass(&self, u: &[Complex64]) -> f64 {
        u.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.h * self.h
    }

    pub fn laplacian(&self, u: &[Complex64]) -> Vec<Complex64> {
        let mut d = u.to_vec();
        self.fft.apply_symbol(&mut d, |k2| Complex64::new(-k2, 0.0));
        d
    }
}

impl Problem for NonlinearSchroedinger {
    type Scalar = Complex64;

    fn name(&self) -> &str {
        "nls"
    }

    fn dim(&self) -> usize {
        self.n * self.n
    }

    fn initial_state(&self) -> Vec<Complex64> {
        let s2 = std::f64::consts::SQRT_2;
        (0..self.n * self.n)
            .map(|idx| {
                let x = (idx / self.n) as f64 * self.h;
                let y = (idx % self.n) as f64 * self.h;
                let v = (1.0 / (1.0 - (x + y).cos() / s2) - 1.0) / s2;
                Complex64::new(v, 0.0)
            })
            .collect()
    }

    fn eval_rhs(&self, u: &[Complex64], t: f64, out: &mut [Complex64]) {
        let mut exp = vec![Complex64::default(); u.len()];
        self.eval_split(u, t, out, &mut exp);
        for (o, e) in out.iter_mut().zip(&exp) {
            *o += e;
        }
    }

    fn is_split(&self) -> bool {
        true
    }

    fn eval_split(
        &self,
        u: &[Complex64],
        _t: f64,
        implicit: &mut [Complex64],
        explicit: &mut [Complex64],
    ) {
        implicit.copy_from_slice(u);
        self.fft.apply_symbol(implicit, |k2| I * -k2);
        for (e, z) in explicit.iter_mut().zip(u) {
            *e = I * 2.0 * z.norm_sqr() * z;
        }
    }

    /// Exact per-mode solve of `(1 - a iΔ) u = b`.
    fn implicit_solve(
        &self,
        a: f64,
        b: &[Complex64],
        _guess: &[Complex64],
        _t: f64,
        _opts: SolveOptions,
    ) -> Result<Solved<Complex64>> {
        if a == 0.0 {
            return Ok(Solved { u: b.to_vec(), iterations: 0, converged: true });
        }
        let mut u = b.to_vec();
        self.fft.apply_symbol(&mut u, |k2| 1.0 / (1.0 + I * a * k2));
        Ok(Solved { u, iterations: 1, converged: true })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::max_diff;
    use approx::assert_abs_diff_eq;

    fn nls(n: usize) -> NonlinearSchroedinger {
        NonlinearSchroedinger::new(NlsParams { n }).unwrap()
    }

    #[test]
    fn constant_state() {
        let p = nls(16);
        let c = Complex64::new(0.3, -0.4);
        let u = vec![c; 256];
        let mut imp = vec![Complex64::default(); 256];
        let mut exp = imp.clone();
        p.eval_split(&u, 0.0, &mut imp, &mut exp);
        assert!(imp.iter().all(|z| z.norm() < 1e-14));
        for e in exp {
            assert_abs_diff_eq!((e - I * 2.0 * c.norm_sqr() * c).norm(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn plane_wave_is_eigenfunction() {
        let p = nls(32);
        let h = p.grid_spacing();
        let u: Vec<Complex64> = (0..32 * 32)
            .map(|i| (I * ((i / 32) as f64 * h + (i % 32) as f64 * h)).exp())
            .collect();
        let mut imp = vec![Complex64::default(); u.len()];
        let mut exp = imp.clone();
        p.eval_split(&u, 0.0, &mut imp, &mut exp);
        for (a, z) in imp.iter().zip(&u) {
            assert_abs_diff_eq!((a - I * -2.0 * z).norm(), 0.0, epsilon = 1e-12);
        }
    }

    fn fd4_laplacian(u: &[Complex64], n: usize, h: f64) -> Vec<Complex64> {
        let at = |r: isize, c: isize| {
            let r = r.rem_euclid(n as isize) as usize;
            let c = c.rem_euclid(n as isize) as usize;
            u[r * n + c]
        };
        let mut out = vec![Complex64::default(); n * n];
        for r in 0..n as isize {
            for c in 0..n as isize {
                let d2 = |f: &dyn Fn(isize) -> Complex64| {
                    (-f(-2) + f(-1) * 16.0 - f(0) * 30.0 + f(1) * 16.0 - f(2)) / (12.0 * h * h)
                };
                let dxx = d2(&|o| at(r + o, c));
                let dyy = d2(&|o| at(r, c + o));
                out[(r as usize) * n + c as usize] = dxx + dyy;
            }
        }
        out
    }

    #[test]
    fn spectral_laplacian_agrees_with_fourth_order_fd() {
        let err = |n: usize| {
            let p = nls(n);
            let u = p.initial_state();
            max_diff(&p.laplacian(&u), &fd4_laplacian(&u, n, p.grid_spacing()))
        };
        let (e32, e64) = (err(32), err(64));
        // fourth-order: halving h reduces the discrepancy by ~16
        assert!(e32 / e64 > 10.0, "e32 = {e32}, e64 = {e64}");
        assert!(e64 < 5e-2, "e64 = {e64}");
    }

    #[test]
    fn implicit_solve_inverts_operator() {
        let p = nls(16);
        let opts = SolveOptions { tol: 0.0, max_iter: 1 };
        let u = p.initial_state();
        let a = 0.37;
        // b = (1 - a iΔ) u
        let lap = p.laplacian(&u);
        let b: Vec<Complex64> = u.iter().zip(&lap).map(|(z, l)| z - I * a * l).collect();
        let s = p.implicit_solve(a, &b, &b, 0.0, opts).unwrap();
        assert!(max_diff(&s.u, &u) < 1e-12);
        let z = p.implicit_solve(0.0, &b, &b, 0.0, opts).unwrap();
        assert_eq!(z.u, b);
    }

    #[test]
    fn single_mode_solve() {
        let p = nls(8);
        let h = p.grid_spacing();
        let b: Vec<Complex64> = (0..64).map(|i| (I * (i / 8) as f64 * h * 3.0).exp()).collect();
        let a = 0.2;
        let s = p.implicit_solve(a, &b, &b, 0.0, SolveOptions { tol: 0.0, max_iter: 1 }).unwrap();
        let factor = 1.0 / (1.0 + I * a * 9.0);
        for (x, y) in s.u.iter().zip(&b) {
            assert_abs_diff_eq!((x - y * factor).norm(), 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn rejects_odd_grid() {
        assert!(NonlinearSchroedinger::new(NlsParams { n: 30 }).is_err());
    }
}
