//! Full-aperture reconstruction of RIS received signals from the sensing elements.
//!
//! Angles come from a greedy, projection-deflated search over a grid dictionary
//! driven by the sample autocorrelation of a snapshot window. Path gains are then
//! re-estimated per snapshot (they carry the instantaneous symbols) and the full
//! `N`-element signal is rebuilt from the steering model.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::geometry::upa_response;
use crate::linalg::{CMatrix, CVector};
use crate::phy::SensingLayout;
use crate::{Error, Result};

/// Relative deflated energy below which the greedy search stops early.
const EXHAUSTED_ENERGY: f64 = 1e-12;

/// Grid of candidate arrival angles and their partial steering vectors.
#[derive(Debug, Clone)]
pub struct AngleGrid {
    pub hor: Vec<f64>,
    pub ver: Vec<f64>,
    pub n_hor: usize,
    pub n_ver: usize,
    layout: SensingLayout,
    /// `|I_s| x G`; column `g = i_h * ver.len() + i_v`.
    dictionary: CMatrix,
}

impl AngleGrid {
    /// `points_hor x points_ver` grid uniform over `[0, pi)` in both angles.
    pub fn uniform(points_hor: usize, points_ver: usize, n_hor: usize, n_ver: usize, layout: &SensingLayout) -> Result<Self> {
        if points_hor == 0 || points_ver == 0 {
            return Err(Error::InvalidArgument("angle grid needs at least one point per axis".into()));
        }
        let hor = (0..points_hor).map(|i| PI * i as f64 / points_hor as f64).collect();
        let ver = (0..points_ver).map(|i| PI * i as f64 / points_ver as f64).collect();
        Self::from_points(hor, ver, n_hor, n_ver, layout)
    }

    pub fn from_points(hor: Vec<f64>, ver: Vec<f64>, n_hor: usize, n_ver: usize, layout: &SensingLayout) -> Result<Self> {
        if layout.indices().iter().any(|&i| i >= n_hor * n_ver) {
            return Err(Error::Dimension("sensing layout exceeds the RIS aperture".into()));
        }
        let g = hor.len() * ver.len();
        let mut dictionary = CMatrix::zeros(layout.len(), g);
        for (ih, th) in hor.iter().enumerate() {
            for (iv, tv) in ver.iter().enumerate() {
                let atom = layout.select(&upa_response(*th, *tv, n_hor, n_ver));
                dictionary.set_column(ih * ver.len() + iv, &atom);
            }
        }
        Ok(Self {
            hor,
            ver,
            n_hor,
            n_ver,
            layout: layout.clone(),
            dictionary,
        })
    }

    pub fn len(&self) -> usize {
        self.dictionary.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.dictionary.ncols() == 0
    }

    pub fn layout(&self) -> &SensingLayout {
        &self.layout
    }

    pub fn angles(&self, atom: usize) -> (f64, f64) {
        (self.hor[atom / self.ver.len()], self.ver[atom % self.ver.len()])
    }

    /// Flat index of a grid pair.
    pub fn atom_index(&self, i_hor: usize, i_ver: usize) -> usize {
        i_hor * self.ver.len() + i_ver
    }

    pub fn atom(&self, g: usize) -> CVector {
        self.dictionary.column(g).into_owned()
    }
}

/// `(1/T) Σ_t y_t y_t^H`.
pub fn sample_autocorrelation(snapshots: &[CVector]) -> Result<CMatrix> {
    let first = snapshots
        .first()
        .ok_or_else(|| Error::InvalidArgument("autocorrelation needs at least one snapshot".into()))?;
    let n = first.len();
    let mut r = CMatrix::zeros(n, n);
    for y in snapshots {
        if y.len() != n {
            return Err(Error::Dimension("snapshots differ in length".into()));
        }
        r += y * y.adjoint();
    }
    Ok(r / Complex64::new(snapshots.len() as f64, 0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmpOutcome {
    /// Selected grid atoms in selection order.
    pub atoms: Vec<usize>,
    pub angles: Vec<(f64, f64)>,
    /// Set when the autocorrelation carried no energy at all.
    pub zero_energy: bool,
}

fn hermitian_quadratic(r: &CMatrix, a: &[Complex64]) -> f64 {
    let n = a.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        let mut row = Complex64::new(0.0, 0.0);
        for j in 0..n {
            row += r[(i, j)] * a[j];
        }
        acc += a[i].conj() * row;
    }
    acc.re
}

/// Deflated power score `a^H P R P a / ||a||^2` of every grid atom.
pub fn deflated_scores(r: &CMatrix, grid: &AngleGrid, selected: &[usize]) -> Vec<f64> {
    let deflated = match projector(grid, selected) {
        Some(p) => &p * r * &p,
        None => r.clone(),
    };
    grid.dictionary
        .column_iter()
        .map(|col| {
            let a: Vec<Complex64> = col.iter().copied().collect();
            let energy: f64 = a.iter().map(|x| x.norm_sqr()).sum();
            hermitian_quadratic(&deflated, &a) / energy
        })
        .collect()
}

/// Projector onto the orthogonal complement of the selected atoms.
fn projector(grid: &AngleGrid, selected: &[usize]) -> Option<CMatrix> {
    if selected.is_empty() {
        return None;
    }
    let cols: Vec<CVector> = selected.iter().map(|&g| grid.atom(g)).collect();
    let a = CMatrix::from_columns(&cols);
    let gram_pinv = a.ad_mul(&a).pseudo_inverse(1e-12).ok()?;
    let n = a.nrows();
    Some(CMatrix::identity(n, n) - &a * gram_pinv * a.adjoint())
}

/// Greedy angle search over `grid` against the autocorrelation `r`.
pub fn omp_angles(r: &CMatrix, grid: &AngleGrid, paths: usize) -> Result<OmpOutcome> {
    let n = grid.layout.len();
    if r.shape() != (n, n) {
        return Err(Error::Dimension(format!("autocorrelation is {:?}, expected {n}x{n}", r.shape())));
    }
    if paths == 0 {
        return Err(Error::InvalidArgument("path count must be at least 1".into()));
    }
    if paths > n {
        return Err(Error::InvalidArgument(format!("{paths} paths cannot be resolved by {n} sensing elements")));
    }
    let total: f64 = (0..n).map(|i| r[(i, i)].re).sum();
    if !(total > 0.0) {
        return Ok(OmpOutcome {
            atoms: Vec::new(),
            angles: Vec::new(),
            zero_energy: true,
        });
    }
    let mut atoms: Vec<usize> = Vec::with_capacity(paths);
    for _ in 0..paths {
        if let Some(p) = projector(grid, &atoms) {
            let remaining: f64 = {
                let d = &p * r * &p;
                (0..n).map(|i| d[(i, i)].re).sum()
            };
            if remaining <= EXHAUSTED_ENERGY * total {
                break;
            }
        }
        let scores = deflated_scores(r, grid, &atoms);
        let mut best = None::<(usize, f64)>;
        for (g, s) in scores.iter().enumerate() {
            if atoms.contains(&g) {
                continue;
            }
            if best.is_none_or(|(_, b)| *s > b) {
                best = Some((g, *s));
            }
        }
        match best {
            Some((g, _)) => atoms.push(g),
            None => break,
        }
    }
    let angles = atoms.iter().map(|&g| grid.angles(g)).collect();
    Ok(OmpOutcome {
        atoms,
        angles,
        zero_energy: false,
    })
}

/// Matched-filter gain `(1/|I_s|) [a(θ)]_{I_s}^H y`.
pub fn estimate_beta(partial: &CVector, angles: (f64, f64), layout: &SensingLayout, n_hor: usize, n_ver: usize) -> Complex64 {
    let a = layout.select(&upa_response(angles.0, angles.1, n_hor, n_ver));
    a.dotc(partial) / layout.len() as f64
}

/// Joint least-squares gains for all selected atoms at once.
fn least_squares_betas(partial: &CVector, atoms: &CMatrix) -> Result<Vec<Complex64>> {
    let pinv = atoms
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::NonFinite(format!("least-squares refit: {e}")))?;
    Ok((pinv * partial).iter().copied().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BetaEstimator {
    #[default]
    MatchedFilter,
    LeastSquares,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredPath {
    pub theta_hor: f64,
    pub theta_ver: f64,
    /// One gain per snapshot of the window.
    pub betas: Vec<Complex64>,
}

/// `Σ_ℓ β̂_ℓ a_R(θ̂_ℓ)` for one snapshot of the window.
pub fn reconstruct(paths: &[RecoveredPath], snapshot: usize, n_hor: usize, n_ver: usize) -> CVector {
    let mut y = CVector::zeros(n_hor * n_ver);
    for p in paths {
        y += upa_response(p.theta_hor, p.theta_ver, n_hor, n_ver) * p.betas[snapshot];
    }
    y
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredObservation {
    pub y_hat: CVector,
    /// `|| y_partial - [ŷ]_{I_s} ||²`
    pub residual_energy: f64,
}

/// Recovery of one source (the BS or one UE) across a snapshot window.
#[derive(Debug, Clone)]
pub struct SourceRecovery {
    pub paths: Vec<RecoveredPath>,
    pub observations: Vec<RecoveredObservation>,
    pub zero_energy: bool,
}

pub fn recover_source(snapshots: &[CVector], grid: &AngleGrid, path_count: usize, estimator: BetaEstimator) -> Result<SourceRecovery> {
    let r = sample_autocorrelation(snapshots)?;
    let omp = omp_angles(&r, grid, path_count)?;
    let layout = &grid.layout;
    let (nh, nv) = (grid.n_hor, grid.n_ver);

    let mut paths: Vec<RecoveredPath> = omp
        .angles
        .iter()
        .map(|&(th, tv)| RecoveredPath {
            theta_hor: th,
            theta_ver: tv,
            betas: Vec::with_capacity(snapshots.len()),
        })
        .collect();
    let atoms = CMatrix::from_columns(&omp.atoms.iter().map(|&g| grid.atom(g)).collect::<Vec<_>>());
    for y in snapshots {
        match estimator {
            BetaEstimator::MatchedFilter => {
                for p in paths.iter_mut() {
                    p.betas.push(estimate_beta(y, (p.theta_hor, p.theta_ver), layout, nh, nv));
                }
            }
            BetaEstimator::LeastSquares if !paths.is_empty() => {
                for (p, b) in paths.iter_mut().zip(least_squares_betas(y, &atoms)?) {
                    p.betas.push(b);
                }
            }
            BetaEstimator::LeastSquares => {}
        }
    }
    let observations = snapshots
        .iter()
        .enumerate()
        .map(|(t, y)| {
            let y_hat = reconstruct(&paths, t, nh, nv);
            let residual_energy = (y - layout.select(&y_hat)).norm_squared();
            RecoveredObservation { y_hat, residual_energy }
        })
        .collect();
    Ok(SourceRecovery {
        paths,
        observations,
        zero_energy: omp.zero_energy,
    })
}

#[derive(Debug, Clone)]
pub struct RecoveryOutput {
    pub bs: SourceRecovery,
    pub ues: Vec<SourceRecovery>,
}

/// Recover the BS signal and every UE signal independently over one window.
pub fn recover_all(
    bs_snapshots: &[CVector],
    ue_snapshots: &[Vec<CVector>],
    grid: &AngleGrid,
    bs_paths: usize,
    ue_paths: usize,
    estimator: BetaEstimator,
) -> Result<RecoveryOutput> {
    if ue_snapshots.iter().any(|s| s.len() != bs_snapshots.len()) {
        return Err(Error::Dimension("UE and BS windows differ in snapshot count".into()));
    }
    let bs = recover_source(bs_snapshots, grid, bs_paths, estimator)?;
    let ues = ue_snapshots
        .iter()
        .map(|s| recover_source(s, grid, ue_paths, estimator))
        .collect::<Result<Vec<_>>>()?;
    Ok(RecoveryOutput { bs, ues })
}
