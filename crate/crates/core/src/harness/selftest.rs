//! Fast invariant checks runnable from the CLI, plus the default gradient check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Arm, ExperimentConfig};
use super::episode::run_episode;
use crate::agent::{normalize_target, update_phase, ActionScale, ActionSet};
use crate::geometry::upa_response;
use crate::linalg::CVector;
use crate::nn::gradcheck::{check_network, check_network_with_step, GradCheckReport};
use crate::nn::{AdamConfig, Architecture, Batch, QNetwork};
use crate::phy::{sensing_indices, LayoutKind, PhaseShiftVector};
use crate::recovery::{recover_source, AngleGrid, BetaEstimator};
use crate::Result;

/// Finite-difference check of every parameter of the default network
/// (N = 32 elements, K = 2 users) on a batch of 4.
pub fn grad_check_default(seed: u64) -> Result<GradCheckReport> {
    grad_check_default_with_step(seed, crate::nn::gradcheck::STEP)
}

pub fn grad_check_default_with_step(seed: u64, step: f64) -> Result<GradCheckReport> {
    let (n, k, rows) = (32, 2, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = QNetwork::new(Architecture::two_pipeline(n * k, n, n), AdamConfig::default(), &mut rng)?;
    let mut batch = |cols: usize| Batch {
        rows,
        cols,
        data: (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    let (s1, s2) = (batch(n * k), batch(n));
    let actions: Vec<usize> = (0..rows).map(|_| rng.random_range(0..n)).collect();
    let targets: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
    check_network_with_step(&net, &s1, &s2, &actions, &targets, step, &mut rng)
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, passed, detail }
}

fn unit_modulus() -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let actions = ActionSet::dft(32, ActionScale::Unitary);
    let mut worst: f64 = 0.0;
    for _ in 0..2000 {
        let v = PhaseShiftVector::random(&mut rng, 32);
        let a = rng.random_range(0..actions.len());
        let next = update_phase(&v, a, rng.random_range(0.0..1.0), &actions).expect("update");
        worst = next.as_vector().iter().map(|c| (c.norm() - 1.0).abs()).fold(worst, f64::max);
    }
    outcome("phase update keeps unit modulus", worst <= 1e-12, format!("max deviation {worst:.2e}"))
}

fn normalization() -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (gamma, eta) = (0.9, 0.03);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let q: Vec<f64> = (0..32).map(|_| rng.random_range(-5.0..5.0)).collect();
        let out = normalize_target(&q, eta, gamma);
        let m = out.iter().sum::<f64>() / out.len() as f64;
        let sd = (out.iter().map(|x| (x - m).powi(2)).sum::<f64>() / out.len() as f64).sqrt();
        worst = worst.max((m - 1.0 / (1.0 - gamma)).abs()).max((sd - eta).abs());
    }
    outcome("target normalization moments", worst <= 1e-9, format!("max error {worst:.2e}"))
}

fn recovery_single_path() -> CheckOutcome {
    let layout = sensing_indices(8, 4, &LayoutKind::FirstRowAndColumn).expect("layout");
    let grid = AngleGrid::uniform(32, 32, 8, 4, &layout).expect("grid");
    let atom = grid.atom_index(9, 21);
    let (th, tv) = grid.angles(atom);
    let full = upa_response(th, tv, 8, 4);
    let snaps: Vec<CVector> = (1..=4).map(|t| layout.select(&(&full * num_complex::Complex64::new(t as f64, -0.5)))).collect();
    match recover_source(&snaps, &grid, 1, BetaEstimator::MatchedFilter) {
        Ok(r) => {
            let err = r
                .observations
                .iter()
                .enumerate()
                .map(|(t, o)| (&o.y_hat - &full * num_complex::Complex64::new(t as f64 + 1.0, -0.5)).norm())
                .fold(0.0, f64::max);
            let hit = (r.paths[0].theta_hor, r.paths[0].theta_ver) == (th, tv);
            outcome("on-grid single path recovered exactly", hit && err <= 1e-10, format!("reconstruction error {err:.2e}"))
        }
        Err(e) => outcome("on-grid single path recovered exactly", false, e.to_string()),
    }
}

fn determinism() -> CheckOutcome {
    let cfg = ExperimentConfig {
        arm: Arm::Aris,
        steps: 3,
        snapshot_window: 4,
        grid_hor: 16,
        grid_ver: 16,
        ..ExperimentConfig::default()
    };
    let run = || run_episode(&cfg).map(|r| format!("{:?}", r.rows));
    match (run(), run()) {
        (Ok(a), Ok(b)) => outcome("episode is deterministic", a == b, String::new()),
        (Err(e), _) | (_, Err(e)) => outcome("episode is deterministic", false, e.to_string()),
    }
}

fn gradients() -> CheckOutcome {
    // a reduced network keeps the self-test quick; `grad-check` covers the full one
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = match QNetwork::new(Architecture::two_pipeline(8, 4, 4), AdamConfig::default(), &mut rng) {
        Ok(n) => n,
        Err(e) => return outcome("backprop matches finite differences", false, e.to_string()),
    };
    let mut batch = |cols: usize| Batch {
        rows: 4,
        cols,
        data: (0..4 * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    let (s1, s2) = (batch(8), batch(4));
    match check_network(&net, &s1, &s2, &[0, 1, 2, 3], &[0.1, 0.2, -0.3, 0.4], &mut rng) {
        Ok(r) => outcome("backprop matches finite differences", r.passed(), format!("max relative error {:.2e}", r.max_rel_error)),
        Err(e) => outcome("backprop matches finite differences", false, e.to_string()),
    }
}

pub fn run_selftest() -> Vec<CheckOutcome> {
    vec![unit_modulus(), normalization(), recovery_single_path(), gradients(), determinism()]
}
