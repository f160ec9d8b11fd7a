//! Acceptance suite. Every criterion prints one `PASS` or `FAIL` line to stderr
//! (bypassing libtest's capture) and then asserts its verdict.
//!
//! Run with `cargo test -p aris-core --test acceptance -- --test-threads=1`
//! to get the lines in criterion order.

use std::io::Write;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use aris_core::agent::{normalize_target, update_phase, ActionScale, ActionSet};
use aris_core::geometry::{upa_response, ChannelSet};
use aris_core::harness::selftest::grad_check_default;
use aris_core::harness::{run_episode, Arm, ExperimentConfig};
use aris_core::linalg::{complex_gaussian, complex_gaussian_vector, CVector};
use aris_core::phy::{effective_matrix, sensing_indices, zf_precoder, LayoutKind, PhaseShiftVector};
use aris_core::rate::{combined_observation, z_power};
use aris_core::recovery::{recover_source, AngleGrid, BetaEstimator};

fn report(id: u32, title: &str, passed: bool, detail: &str) {
    let line = format!("{} criterion {id} ({title}): {detail}\n", if passed { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(passed, "criterion {id} failed: {detail}");
}

fn median(mut x: Vec<f64>) -> f64 {
    x.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = x.len();
    if n % 2 == 1 {
        x[n / 2]
    } else {
        0.5 * (x[n / 2 - 1] + x[n / 2])
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

#[test]
fn criterion_1_estimator_identity() {
    const DRAWS: usize = 100_000;
    const TOL: f64 = 0.02;
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let tx = cfg.tx();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let geom = cfg.layout.sample(&mut rng);
    let ch = ChannelSet::build(&geom).unwrap();
    let n = geom.ris_elements();
    let v = PhaseShiftVector::random(&mut rng, n);
    let h_eff = effective_matrix(&ch.h_r, &v, &ch.h).unwrap();
    let f = zf_precoder(&h_eff).unwrap();
    let k = ch.h.len();

    // full-aperture observations with sensing noise, no recovery error
    let mut samples = vec![Vec::with_capacity(DRAWS); k];
    let h_r_f = &ch.h_r * f.matrix();
    for _ in 0..DRAWS {
        let s = complex_gaussian_vector(&mut rng, k, tx.p_bs);
        let y_r = &h_r_f * &s + complex_gaussian_vector(&mut rng, n, tx.noise_var);
        for (u, hk) in ch.h.iter().enumerate() {
            let x = complex_gaussian(&mut rng, tx.p_ue);
            let y_k = hk * x + complex_gaussian_vector(&mut rng, n, tx.noise_var);
            samples[u].push(combined_observation(&y_r, &v, &y_k).unwrap());
        }
    }
    let mut worst: f64 = 0.0;
    for u in 0..k {
        let g = f.column(u).dotc(&h_eff.column(u).into_owned()).norm_sqr();
        let closed = tx.p_bs * tx.p_ue * g + n as f64 * tx.noise_var.powi(2);
        let sample = z_power(&samples[u]).unwrap();
        worst = worst.max((sample - closed).abs() / closed);
    }
    let elapsed = start.elapsed();
    let passed = worst <= TOL && elapsed < Duration::from_secs(30);
    report(
        1,
        "estimator identity",
        passed,
        &format!("max relative deviation {worst:.4} (limit {TOL}) over {DRAWS} draws, {:.1} s (limit 30 s)", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_2_recovery_exactness() {
    let start = Instant::now();
    let (nh, nv) = (8, 4);
    let layout = sensing_indices(nh, nv, &LayoutKind::FirstRowAndColumn).unwrap();
    let grid = AngleGrid::uniform(64, 64, nh, nv, &layout).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let window = 32;

    // (a) single noise-free on-grid path; polar index 0 is skipped because every
    // azimuth has the same response there
    let mut angles_exact = true;
    let mut beta_err: f64 = 0.0;
    for _ in 0..20 {
        let atom = grid.atom_index(rng.random_range(0..64), rng.random_range(1..64));
        let (th, tv) = grid.angles(atom);
        let full = upa_response(th, tv, nh, nv);
        let betas: Vec<Complex64> = (0..window).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
        let snaps: Vec<CVector> = betas.iter().map(|b| layout.select(&(&full * *b))).collect();
        let rec = recover_source(&snaps, &grid, 1, BetaEstimator::MatchedFilter).unwrap();
        let p = &rec.paths[0];
        angles_exact &= p.theta_hor == th && p.theta_ver == tv;
        for (b_hat, b) in p.betas.iter().zip(&betas) {
            beta_err = beta_err.max((b_hat - b).norm());
        }
    }

    // (b) three well-separated on-grid paths at 30 dB per-element sensing SNR
    let coherence = |a: usize, b: usize| grid.atom(a).dotc(&grid.atom(b)).norm() / layout.len() as f64;
    let snr = 1e3;
    let trials = 100;
    let mut nmse_sum = 0.0;
    for _ in 0..trials {
        let atoms: Vec<usize> = loop {
            let c: Vec<usize> = (0..3).map(|_| grid.atom_index(rng.random_range(0..64), rng.random_range(1..64))).collect();
            if (0..3).all(|i| (i + 1..3).all(|j| coherence(c[i], c[j]) <= 0.05)) {
                break c;
            }
        };
        let fulls: Vec<CVector> = atoms
            .iter()
            .map(|&a| {
                let (th, tv) = grid.angles(a);
                upa_response(th, tv, nh, nv)
            })
            .collect();
        let noise_var = 3.0 / snr;
        let mut truth = Vec::new();
        let mut snaps = Vec::new();
        for _ in 0..window {
            let mut y = CVector::zeros(nh * nv);
            for f in &fulls {
                y += f * complex_gaussian(&mut rng, 1.0);
            }
            snaps.push(layout.select(&y) + complex_gaussian_vector(&mut rng, layout.len(), noise_var));
            truth.push(y);
        }
        let rec = recover_source(&snaps, &grid, 3, BetaEstimator::MatchedFilter).unwrap();
        let err: f64 = rec.observations.iter().zip(&truth).map(|(o, y)| (&o.y_hat - y).norm_squared()).sum();
        let energy: f64 = truth.iter().map(|y| y.norm_squared()).sum();
        nmse_sum += err / energy;
    }
    let nmse_db = 10.0 * (nmse_sum / trials as f64).log10();
    let elapsed = start.elapsed();
    let passed = angles_exact && beta_err <= 1e-10 && nmse_db <= -20.0 && elapsed < Duration::from_secs(60);
    report(
        2,
        "recovery exactness",
        passed,
        &format!(
            "single path: angles exact = {angles_exact}, max beta error {beta_err:.2e} (limit 1e-10); three paths at 30 dB: NMSE {nmse_db:.2} dB (limit -20 dB); {:.1} s (limit 60 s)",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_3_gradient_correctness() {
    let start = Instant::now();
    let r = grad_check_default(7).unwrap();
    let elapsed = start.elapsed();
    let passed = r.max_rel_error <= 1e-4 && r.checked > 0 && elapsed < Duration::from_secs(60);
    report(
        3,
        "gradient correctness",
        passed,
        &format!(
            "max relative error {:.2e} (limit 1e-4) over {} parameters, {} skipped at activation kinks, {:.1} s (limit 60 s)",
            r.max_rel_error,
            r.checked,
            r.skipped_kinks,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_4_normalization_identities() {
    let gamma = 0.9;
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let len = rng.random_range(2..=64);
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let q: Vec<f64> = (0..len).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let eta = rng.random_range(0.01..1.0);
        let out = normalize_target(&q, eta, gamma);
        let m = mean(&out);
        let sd = (out.iter().map(|x| (x - m).powi(2)).sum::<f64>() / out.len() as f64).sqrt();
        worst = worst.max((m - 1.0 / (1.0 - gamma)).abs()).max((sd - eta).abs());
    }
    report(4, "normalization identities", worst <= 1e-9, &format!("max error of mean and std {worst:.2e} (limit 1e-9)"));
}

#[test]
fn criterion_5_unit_modulus_preservation() {
    let n = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let sets = [ActionSet::dft(n, ActionScale::Unitary), ActionSet::dft(n, ActionScale::UnitModulus)];
    let mut v = PhaseShiftVector::random(&mut rng, n);
    let mut worst: f64 = 0.0;
    for i in 0..100_000 {
        let actions = &sets[i % 2];
        let a = rng.random_range(0..actions.len());
        let eta = rng.random_range(0.0..2.0);
        // composed updates, so any drift would accumulate
        v = update_phase(&v, a, eta, actions).unwrap();
        worst = v.as_vector().iter().map(|c| (c.norm() - 1.0).abs()).fold(worst, f64::max);
    }
    report(5, "unit-modulus preservation", worst <= 1e-12, &format!("max | |v_i| - 1 | = {worst:.2e} over 100000 updates (limit 1e-12)"));
}

/// Per-seed median over the last `tail` steps.
fn tail_medians(arm: Arm, speed: f64, seeds: &[u64], steps: usize, tail: usize) -> Vec<f64> {
    seeds
        .par_iter()
        .map(|&seed| {
            let mut cfg = ExperimentConfig { arm, seed, steps, ..ExperimentConfig::default() };
            cfg.layout.speed = speed;
            let r = run_episode(&cfg).unwrap();
            median(r.rows[steps - tail..].iter().map(|x| x.true_rate).collect())
        })
        .collect()
}

#[test]
fn criterion_6_end_to_end_improvement() {
    let start = Instant::now();
    let seeds: Vec<u64> = (1..=10).collect();
    let aris = median(tail_medians(Arm::Aris, 0.0, &seeds, 500, 50));
    let ref1 = median(tail_medians(Arm::ArisRef1, 0.0, &seeds, 500, 50));
    let random = median(tail_medians(Arm::Random, 0.0, &seeds, 500, 50));
    let elapsed = start.elapsed();
    let ratio = aris / random;
    let passed = ratio >= 1.2 && ref1 >= aris && elapsed <= Duration::from_secs(300);
    report(
        6,
        "end-to-end improvement",
        passed,
        &format!(
            "median last-50 true rate: aris {aris:.4}, aris_ref1 {ref1:.4}, random {random:.4}; aris/random = {ratio:.3} (need >= 1.2), aris_ref1 >= aris: {}; {:.0} s (limit 300 s)",
            ref1 >= aris,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_7_mobility_ordering() {
    let start = Instant::now();
    let seeds: Vec<u64> = (1..=10).collect();
    let last_mean = |speed: f64| -> Vec<f64> {
        seeds
            .par_iter()
            .map(|&seed| {
                let mut cfg = ExperimentConfig { arm: Arm::Aris, seed, steps: 500, ..ExperimentConfig::default() };
                cfg.layout.speed = speed;
                let r = run_episode(&cfg).unwrap();
                mean(&r.rows[400..].iter().map(|x| x.true_rate).collect::<Vec<_>>())
            })
            .collect()
    };
    let slow = last_mean(1.0);
    let fast = last_mean(5.0);
    let d: Vec<f64> = slow.iter().zip(&fast).map(|(a, b)| a - b).collect();
    let n = d.len() as f64;
    let md = mean(&d);
    let sd = (d.iter().map(|x| (x - md).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let t = md / (sd / n.sqrt());
    // one-sided p-value of a reversal (fast better than slow)
    let p_reversal = StudentsT::new(0.0, 1.0, n - 1.0).unwrap().cdf(t);
    let elapsed = start.elapsed();
    let passed = p_reversal >= 0.05 && elapsed <= Duration::from_secs(600);
    report(
        7,
        "mobility ordering",
        passed,
        &format!(
            "mean last-100 true rate 1 m/s {:.4} vs 5 m/s {:.4}; paired t = {t:.3}, reversal p = {p_reversal:.3} (fail below 0.05); {:.0} s (limit 600 s)",
            mean(&slow),
            mean(&fast),
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_8_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.cfg");
    std::fs::write(&cfg_path, "arm = aris\nsteps = 40\nseed = 11\nspeed = 1.0\n").unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_aris"))
            .args(["run", "--config"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        std::fs::read(out).unwrap()
    };
    let (a, b) = (run("a.csv"), run("b.csv"));
    let lines = String::from_utf8_lossy(&a).lines().count();
    report(8, "determinism", a == b && lines == 41, &format!("two `run` invocations, {} and {} bytes, identical = {}", a.len(), b.len(), a == b));
}
