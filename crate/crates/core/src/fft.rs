use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Square 2D complex FFT (row pass, transpose, row pass, transpose).
pub(crate) struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    transposed: Vec<Complex64>,
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len());
        Self {
            n,
            forward,
            inverse,
            scratch: vec![Complex64::default(); scratch_len],
            transposed: vec![Complex64::default(); n * n],
        }
    }

    pub fn forward(&mut self, data: &mut [Complex64]) {
        let fft = Arc::clone(&self.forward);
        self.apply(fft.as_ref(), data);
    }

    /// Unnormalized inverse; divide by `n²` to undo [`Fft2::forward`].
    pub fn inverse(&mut self, data: &mut [Complex64]) {
        let fft = Arc::clone(&self.inverse);
        self.apply(fft.as_ref(), data);
    }

    fn apply(&mut self, fft: &dyn Fft<f64>, data: &mut [Complex64]) {
        debug_assert_eq!(data.len(), self.n * self.n);
        fft.process_with_scratch(data, &mut self.scratch);
        transpose(data, &mut self.transposed, self.n);
        fft.process_with_scratch(&mut self.transposed, &mut self.scratch);
        transpose(&self.transposed, data, self.n);
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], n: usize) {
    const BLOCK: usize = 16;
    for by in (0..n).step_by(BLOCK) {
        for bx in (0..n).step_by(BLOCK) {
            for y in by..(by + BLOCK).min(n) {
                for x in bx..(bx + BLOCK).min(n) {
                    dst[x * n + y] = src[y * n + x];
                }
            }
        }
    }
}

/// Symbol of the periodic 5-point Laplacian `DᵀD` with forward differences.
pub(crate) fn laplacian_symbol(n: usize) -> Vec<f64> {
    let s: Vec<f64> = (0..n)
        .map(|k| {
            let t = (std::f64::consts::PI * k as f64 / n as f64).sin();
            4.0 * t * t
        })
        .collect();
    let mut symbol = Vec::with_capacity(n * n);
    for ky in 0..n {
        for kx in 0..n {
            symbol.push(s[kx] + s[ky]);
        }
    }
    symbol
}
