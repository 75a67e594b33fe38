//! Doubly periodic 2D Fourier transforms on an `n × n` grid, row-major.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// `|k|²` per mode for the physical period given at construction.
    k2: Vec<f64>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("n", &self.n).finish()
    }
}

impl Fft2 {
    pub fn new(n: usize, period: f64) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scale = 2.0 * std::f64::consts::PI / period;
        let wave = |i: usize| -> f64 {
            let k = if i < n / 2 { i as f64 } else { i as f64 - n as f64 };
            k * scale
        };
        let mut k2 = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                k2[r * n + c] = wave(r).powi(2) + wave(c).powi(2);
            }
        }
        Fft2 { n, forward, inverse, k2 }
    }

    fn transform(&self, plan: &dyn Fft<f64>, data: &mut [Complex64]) {
        let n = self.n;
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(data, &mut scratch);
        transpose(data, n);
        plan.process_with_scratch(data, &mut scratch);
        transpose(data, n);
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(self.forward.as_ref(), data);
    }

    /// Normalised inverse transform.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(self.inverse.as_ref(), data);
        let s = 1.0 / (self.n * self.n) as f64;
        data.iter_mut().for_each(|x| *x *= s);
    }

    /// Apply the Fourier multiplier `symbol(|k|²)` to `data` in place.
    pub fn apply_symbol(&self, data: &mut [Complex64], symbol: impl Fn(f64) -> Complex64) {
        self.forward(data);
        for (x, &k2) in data.iter_mut().zip(&self.k2) {
            *x *= symbol(k2);
        }
        self.inverse(data);
    }
}

fn transpose(data: &mut [Complex64], n: usize) {
    for r in 0..n {
        for c in (r + 1)..n {
            data.swap(r * n + c, c * n + r);
        }
    }
}
