use std::sync::atomic::{AtomicBool, Ordering};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::spectral::Fft2;
use super::{Problem, SolveOptions, Solved};
use crate::error::{Result, SdcError};

/// Shape of the initial circle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AcInitialProfile {
    /// `½(1 + tanh((R₀ - |x|)/(√2 ε)))`: phase 1 inside a circle of radius R₀.
    Standard,
    /// `tanh(R₀|x|/(√2 ε))`, kept verbatim for comparison runs.
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcParams {
    pub n: usize,
    pub eps: f64,
    pub radius: f64,
    pub forcing_period: f64,
    pub forcing_amplitude: f64,
    pub profile: AcInitialProfile,
}

impl Default for AcParams {
    fn default() -> Self {
        AcParams {
            n: 128,
            eps: 0.04,
            radius: 0.25,
            forcing_period: 0.032,
            forcing_amplitude: 1e-2,
            profile: AcInitialProfile::Standard,
        }
    }
}

/// Forced Allen–Cahn equation on `[-0.5, 0.5)²`, periodic, with a global
/// forcing that makes the circle alternately grow and shrink. The spectral
/// Laplacian is implicit, reaction and forcing explicit.
#[derive(Debug)]
pub struct AllenCahn {
    params: AcParams,
    h: f64,
    fft: Fft2,
    guard_hit: AtomicBool,
}

impl AllenCahn {
    pub fn new(params: AcParams) -> Result<Self> {
        if params.n < 4 || !params.n.is_power_of_two() {
            return Err(SdcError::invalid("Allen-Cahn grid size must be a power of two >= 4"));
        }
        if !(params.eps > 0.0) {
            return Err(SdcError::invalid("Allen-Cahn needs eps > 0"));
        }
        Ok(AllenCahn {
            h: 1.0 / params.n as f64,
            fft: Fft2::new(params.n, 1.0),
            params,
            guard_hit: AtomicBool::new(false),
        })
    }

    pub fn params(&self) -> &AcParams {
        &self.params
    }

    /// Set when the forcing denominator vanished and the forcing was dropped.
    pub fn forcing_guard_hit(&self) -> bool {
        self.guard_hit.load(Ordering::Relaxed)
    }

    fn coords(&self, idx: usize) -> (f64, f64) {
        let n = self.params.n;
        (-0.5 + (idx / n) as f64 * self.h, -0.5 + (idx % n) as f64 * self.h)
    }

    pub fn laplacian(&self, u: &[f64]) -> Vec<f64> {
        let mut d: Vec<Complex64> = u.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fft.apply_symbol(&mut d, |k2| Complex64::new(-k2, 0.0));
        d.into_iter().map(|z| z.re).collect()
    }

    #[inline]
    fn reaction(&self, u: f64) -> f64 {
        -2.0 / (self.params.eps * self.params.eps) * u * (1.0 - u) * (1.0 - 2.0 * u)
    }

    /// Global forcing factor `f(u, t)`.
    fn forcing(&self, u: &[f64], lap: &[f64], t: f64) -> f64 {
        let num: f64 = u.iter().zip(lap).map(|(&x, &l)| l + self.reaction(x)).sum();
        let den: f64 = u.iter().map(|&x| 6.0 * x * (1.0 - x)).sum();
        let n2 = (self.params.n * self.params.n) as f64;
        if den.abs() < 1e-14 * n2 {
            self.guard_hit.store(true, Ordering::Relaxed);
            return 0.0;
        }
        let p = &self.params;
        let phase = 4.0 * std::f64::consts::PI * t / p.forcing_period;
        num / den * (1.0 - phase.sin() * p.forcing_amplitude)
    }

    /// Radius of the inner phase from the number of cells with `u > 1/2`.
    pub fn radius_by_count(&self, u: &[f64]) -> f64 {
        let count = u.iter().filter(|&&x| x > 0.5).count() as f64;
        (count * self.h * self.h / std::f64::consts::PI).sqrt()
    }

    /// Radius of a disc carrying the same phase mass, `√(Σu h²/π)`.
    pub fn radius_by_mass(&self, u: &[f64]) -> f64 {
        let mass: f64 = u.iter().sum::<f64>() * self.h * self.h;
        (mass.max(0.0) / std::f64::consts::PI).sqrt()
    }
}

impl Problem for AllenCahn {
    type Scalar = f64;

    fn name(&self) -> &str {
        "allen-cahn"
    }

    fn dim(&self) -> usize {
        self.params.n * self.params.n
    }

    fn initial_state(&self) -> Vec<f64> {
        let p = &self.params;
        let w = std::f64::consts::SQRT_2 * p.eps;
        (0..self.dim())
            .map(|idx| {
                let (x, y) = self.coords(idx);
                let r = (x * x + y * y).sqrt();
                match p.profile {
                    AcInitialProfile::Standard => 0.5 * (1.0 + ((p.radius - r) / w).tanh()),
                    AcInitialProfile::Printed => (p.radius * r / w).tanh(),
                }
            })
            .collect()
    }

    fn eval_rhs(&self, u: &[f64], t: f64, out: &mut [f64]) {
        let mut exp = vec![0.0; u.len()];
        self.eval_split(u, t, out, &mut exp);
        for (o, e) in out.iter_mut().zip(&exp) {
            *o += e;
        }
    }

    fn is_split(&self) -> bool {
        true
    }

    fn eval_split(&self, u: &[f64], t: f64, implicit: &mut [f64], explicit: &mut [f64]) {
        let lap = self.laplacian(u);
        let f = self.forcing(u, &lap, t);
        for i in 0..u.len() {
            implicit[i] = lap[i];
            let x = u[i];
            explicit[i] = self.reaction(x) - 6.0 * x * (1.0 - x) * f;
        }
    }

    fn implicit_solve(
        &self,
        a: f64,
        b: &[f64],
        _guess: &[f64],
        _t: f64,
        _opts: SolveOptions,
    ) -> Result<Solved<f64>> {
        if a == 0.0 {
            return Ok(Solved { u: b.to_vec(), iterations: 0, converged: true });
        }
        let mut d: Vec<Complex64> = b.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fft.apply_symbol(&mut d, |k2| Complex64::new(1.0 / (1.0 + a * k2), 0.0));
        Ok(Solved { u: d.into_iter().map(|z| z.re).collect(), iterations: 1, converged: true })
    }
}
