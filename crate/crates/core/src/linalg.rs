//! Complex vector/matrix aliases and the few numeric helpers shared across modules.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

pub type CVector = DVector<Complex64>;
pub type CMatrix = DMatrix<Complex64>;

/// `e^{j·phase}`.
#[inline]
pub fn cis(phase: f64) -> Complex64 {
    Complex64::from_polar(1.0, phase)
}

/// One draw of `CN(0, variance)`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let scale = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(scale * re, scale * im)
}

pub fn complex_gaussian_vector<R: Rng + ?Sized>(rng: &mut R, len: usize, variance: f64) -> CVector {
    CVector::from_fn(len, |_, _| complex_gaussian(rng, variance))
}

/// Forward DFT with `1/sqrt(N)` scaling, `X[m] = N^{-1/2} Σ_n x[n] e^{-j2πmn/N}`.
pub fn unitary_dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf = x.to_vec();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let scale = 1.0 / (n as f64).sqrt();
    buf.iter_mut().for_each(|c| *c *= scale);
    buf
}

/// The unitary DFT matrix, entry `(n, m) = N^{-1/2} e^{-j2πnm/N}`.
pub fn dft_matrix(n: usize) -> CMatrix {
    let scale = 1.0 / (n as f64).sqrt();
    CMatrix::from_fn(n, n, |row, col| {
        let k = (row * col) % n;
        cis(-2.0 * PI * k as f64 / n as f64) * scale
    })
}

/// Ratio of largest to smallest singular value; infinite for rank-deficient input.
pub fn condition_number(m: &CMatrix) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
