//! True downlink sum rate and its observation-only estimate at the RIS.

use num_complex::Complex64;

use crate::linalg::{CMatrix, CVector};
use crate::phy::{PhaseShiftVector, Precoder, TxConfig};
use crate::{Error, Result};

/// Rates in bits/s/Hz with their per-user terms.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub true_rate: f64,
    pub estimated_rate: f64,
    pub true_per_user: Vec<f64>,
    pub estimated_per_user: Vec<f64>,
    pub z_power: Vec<f64>,
}

/// Per-user terms `log2(1 + SINR_k)` of the downlink sum rate.
pub fn true_rate_terms(h: &CMatrix, precoder: &Precoder, tx: &TxConfig) -> Result<Vec<f64>> {
    let f = precoder.matrix();
    if h.shape() != f.shape() {
        return Err(Error::Dimension(format!("H is {:?} but F is {:?}", h.shape(), f.shape())));
    }
    // g[(k, j)] = h_k^H f_j
    let g = h.ad_mul(f);
    let k = h.ncols();
    Ok((0..k)
        .map(|u| {
            let signal = tx.p_bs * g[(u, u)].norm_sqr();
            let interference: f64 = (0..k).filter(|&j| j != u).map(|j| tx.p_bs * g[(u, j)].norm_sqr()).sum();
            (1.0 + signal / (interference + tx.noise_var)).log2()
        })
        .collect())
}

pub fn true_sum_rate(h: &CMatrix, precoder: &Precoder, tx: &TxConfig) -> Result<f64> {
    Ok(true_rate_terms(h, precoder, tx)?.iter().sum())
}

/// `z_k = ŷ_R^H diag(v) ŷ_k`.
pub fn combined_observation(y_r: &CVector, v: &PhaseShiftVector, y_k: &CVector) -> Result<Complex64> {
    if y_r.len() != v.len() || y_k.len() != v.len() {
        return Err(Error::Dimension("observation and phase vectors differ in length".into()));
    }
    Ok(y_r.dotc(&v.as_vector().component_mul(y_k)))
}

/// Sample mean of `|z_k|²`.
pub fn z_power(samples: &[Complex64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("z power needs at least one sample".into()));
    }
    Ok(samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / samples.len() as f64)
}

pub fn estimated_rate_terms(z_powers: &[f64], tx: &TxConfig) -> Result<Vec<f64>> {
    if let Some(p) = z_powers.iter().find(|p| !(**p >= 0.0)) {
        return Err(Error::InvalidArgument(format!("z power must be non-negative, got {p}")));
    }
    Ok(z_powers
        .iter()
        .map(|p| (1.0 + (p / tx.p_ue) / tx.noise_var).log2())
        .collect())
}

/// `Σ_k log2(1 + (E|z_k|² / P_UE) / σ²)`.
///
/// The estimate carries an upward bias of `N σ⁴ / P_UE` in each numerator from the
/// noise-on-noise product; it is kept, not subtracted.
pub fn estimated_sum_rate(z_powers: &[f64], tx: &TxConfig) -> Result<f64> {
    Ok(estimated_rate_terms(z_powers, tx)?.iter().sum())
}

/// Estimated rate from per-snapshot full-aperture observations of the BS and each UE.
pub fn estimate_from_observations(
    bs: &[CVector],
    ues: &[Vec<CVector>],
    v: &PhaseShiftVector,
    tx: &TxConfig,
) -> Result<(f64, Vec<f64>)> {
    let powers = ues
        .iter()
        .map(|ue| {
            if ue.len() != bs.len() {
                return Err(Error::Dimension("UE and BS windows differ in length".into()));
            }
            let z = bs
                .iter()
                .zip(ue)
                .map(|(yr, yk)| combined_observation(yr, v, yk))
                .collect::<Result<Vec<_>>>()?;
            z_power(&z)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((estimated_sum_rate(&powers, tx)?, powers))
}
