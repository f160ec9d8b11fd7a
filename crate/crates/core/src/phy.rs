//! Phase application, effective channels, BS precoding, symbol/noise draws and
//! partial sensing at the RIS.

use num_complex::Complex64;
use rand::Rng;

use crate::linalg::{complex_gaussian, complex_gaussian_vector, condition_number, cis, CMatrix, CVector};
use crate::{Error, Result};

const UNIT_MODULUS_TOL: f64 = 1e-12;

/// RIS coefficients `v`, every entry on the unit circle.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseShiftVector(CVector);

impl PhaseShiftVector {
    pub fn new(v: CVector) -> Result<Self> {
        if let Some(i) = v.iter().position(|x| (x.norm() - 1.0).abs() > UNIT_MODULUS_TOL) {
            return Err(Error::InvalidArgument(format!(
                "phase shift entry {i} has modulus {}",
                v[i].norm()
            )));
        }
        Ok(Self(v))
    }

    /// All-ones (zero phase) configuration.
    pub fn ones(n: usize) -> Self {
        Self(CVector::from_element(n, Complex64::new(1.0, 0.0)))
    }

    pub fn from_phases(phases: &[f64]) -> Self {
        Self(CVector::from_iterator(phases.len(), phases.iter().map(|p| cis(*p))))
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Self {
        let phases: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect();
        Self::from_phases(&phases)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &CVector {
        &self.0
    }

    pub fn phases(&self) -> Vec<f64> {
        self.0.iter().map(|x| x.arg()).collect()
    }
}

/// Indices of the receive-capable RIS elements (0-based, into the UPA ordering).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensingLayout {
    indices: Vec<usize>,
}

impl SensingLayout {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn select(&self, full: &CVector) -> CVector {
        CVector::from_iterator(self.indices.len(), self.indices.iter().map(|&i| full[i]))
    }

    pub fn select_rows(&self, m: &CMatrix) -> CMatrix {
        m.select_rows(self.indices.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayoutKind {
    /// First horizontal row and first vertical column of the UPA.
    FirstRowAndColumn,
    Explicit(Vec<usize>),
}

pub fn sensing_indices(n_hor: usize, n_ver: usize, kind: &LayoutKind) -> Result<SensingLayout> {
    let n = n_hor * n_ver;
    if n == 0 {
        return Err(Error::InvalidArgument("RIS must have at least one element".into()));
    }
    let indices = match kind {
        LayoutKind::FirstRowAndColumn => {
            // element (i_h, i_v) is at i_h * n_ver + i_v
            let mut idx: Vec<usize> = (0..n_ver).collect();
            idx.extend((1..n_hor).map(|ih| ih * n_ver));
            idx.sort_unstable();
            idx
        }
        LayoutKind::Explicit(list) => {
            if list.is_empty() {
                return Err(Error::InvalidArgument("empty sensing layout".into()));
            }
            let mut seen = vec![false; n];
            for &i in list {
                if i >= n {
                    return Err(Error::InvalidArgument(format!("sensing index {i} out of range for N = {n}")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidArgument(format!("duplicate sensing index {i}")));
                }
            }
            list.clone()
        }
    };
    Ok(SensingLayout { indices })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxConfig {
    /// BS transmit power, W.
    pub p_bs: f64,
    /// UE transmit power, W.
    pub p_ue: f64,
    /// Noise variance, W.
    pub noise_var: f64,
}

impl TxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_bs > 0.0 && self.p_ue > 0.0 && self.noise_var > 0.0) {
            return Err(Error::InvalidArgument(format!("transmit config must be positive: {self:?}")));
        }
        Ok(())
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Thermal noise power in watts for a bandwidth in Hz (-174 dBm/Hz floor).
pub fn thermal_noise_watts(bandwidth: f64) -> f64 {
    dbm_to_watts(-174.0 + 10.0 * bandwidth.log10())
}

impl Default for TxConfig {
    fn default() -> Self {
        Self {
            p_bs: dbm_to_watts(30.0),
            p_ue: dbm_to_watts(10.0),
            noise_var: thermal_noise_watts(20e6),
        }
    }
}

/// BS precoding matrix `F` (M x K) with unit Frobenius norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Precoder(CMatrix);

impl Precoder {
    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn column(&self, k: usize) -> CVector {
        self.0.column(k).into_owned()
    }

    fn normalized(f: CMatrix) -> Result<Self> {
        let norm = f.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::NonFinite(format!("precoder norm {norm}")));
        }
        Ok(Self(f / Complex64::new(norm, 0.0)))
    }
}

/// `H_R^H diag(v) h_k`.
pub fn effective_channel(h_r: &CMatrix, v: &PhaseShiftVector, h_k: &CVector) -> Result<CVector> {
    let n = v.len();
    if h_r.nrows() != n || h_k.len() != n {
        return Err(Error::Dimension(format!(
            "H_R is {}x{}, v has {n}, h_k has {}",
            h_r.nrows(),
            h_r.ncols(),
            h_k.len()
        )));
    }
    let weighted = v.as_vector().component_mul(h_k);
    Ok(h_r.ad_mul(&weighted))
}

/// Effective uplink matrix `[h_1 ... h_K]` (M x K).
pub fn effective_matrix(h_r: &CMatrix, v: &PhaseShiftVector, h: &[CVector]) -> Result<CMatrix> {
    let cols = h
        .iter()
        .map(|hk| effective_channel(h_r, v, hk))
        .collect::<Result<Vec<_>>>()?;
    Ok(CMatrix::from_columns(&cols))
}

fn regularized_precoder(h: &CMatrix, reg: f64, context: &'static str) -> Result<Precoder> {
    let k = h.ncols();
    if k > h.nrows() {
        return Err(Error::Dimension(format!("K = {k} users exceeds M = {} antennas", h.nrows())));
    }
    let gram = h.ad_mul(h) + CMatrix::identity(k, k) * Complex64::new(reg, 0.0);
    let condition = condition_number(&gram);
    if !condition.is_finite() || condition > 1e14 {
        return Err(Error::Singular { context, condition });
    }
    let inv = gram.try_inverse().ok_or(Error::Singular { context, condition })?;
    Precoder::normalized(h * inv)
}

/// `F ∝ H (H^H H + (K σ²/P_BS) I)^{-1}`, scaled to `||F||_F = 1`.
pub fn mmse_precoder(h: &CMatrix, tx: &TxConfig) -> Result<Precoder> {
    let reg = h.ncols() as f64 * tx.noise_var / tx.p_bs;
    regularized_precoder(h, reg, "MMSE precoder")
}

/// `F ∝ H (H^H H)^{-1}`, scaled to `||F||_F = 1`.
pub fn zf_precoder(h: &CMatrix) -> Result<Precoder> {
    regularized_precoder(h, 0.0, "ZF precoder")
}

/// One round of downlink symbols `s` and uplink symbols `x_k`.
#[derive(Debug, Clone)]
pub struct Symbols {
    pub downlink: CVector,
    pub uplink: Vec<Complex64>,
}

pub fn draw_symbols<R: Rng + ?Sized>(rng: &mut R, k: usize, tx: &TxConfig) -> Symbols {
    let downlink = complex_gaussian_vector(rng, k, tx.p_bs);
    let uplink = (0..k).map(|_| complex_gaussian(rng, tx.p_ue)).collect();
    Symbols { downlink, uplink }
}

/// `r_k = h_k^H F s + n_k`.
pub fn dl_receive<R: Rng + ?Sized>(
    eff_k: &CVector,
    precoder: &Precoder,
    s: &CVector,
    noise_var: f64,
    rng: &mut R,
) -> Complex64 {
    let tx = precoder.matrix() * s;
    eff_k.dotc(&tx) + complex_gaussian(rng, noise_var)
}

/// A partial RIS observation plus the noise-free full-aperture signal it came from.
#[derive(Debug, Clone)]
pub struct SensedSignal {
    pub partial: CVector,
    pub clean_full: CVector,
}

fn sense<R: Rng + ?Sized>(clean_full: CVector, layout: &SensingLayout, noise_var: f64, rng: &mut R) -> SensedSignal {
    let noise = complex_gaussian_vector(rng, layout.len(), noise_var);
    let partial = layout.select(&clean_full) + noise;
    SensedSignal { partial, clean_full }
}

/// `[y_R]_{I_s} = [H_R]_{I_s,:} F s + n`.
pub fn ris_sense_bs<R: Rng + ?Sized>(
    h_r: &CMatrix,
    precoder: &Precoder,
    s: &CVector,
    layout: &SensingLayout,
    noise_var: f64,
    rng: &mut R,
) -> SensedSignal {
    let clean_full = h_r * (precoder.matrix() * s);
    sense(clean_full, layout, noise_var, rng)
}

/// `[y_k]_{I_s} = [h_k]_{I_s} x_k + n`.
pub fn ris_sense_ue<R: Rng + ?Sized>(
    h_k: &CVector,
    x_k: Complex64,
    layout: &SensingLayout,
    noise_var: f64,
    rng: &mut R,
) -> SensedSignal {
    sense(h_k * x_k, layout, noise_var, rng)
}
