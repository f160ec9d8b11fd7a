//! End-to-end checks of the experiment harness and its command-line interface.

use aris_core::harness::cli::{cli_main, EXIT_CONFIG, EXIT_OK, EXIT_USAGE};
use aris_core::harness::{parse_csv, run_episode, Arm, ExperimentConfig};
use aris_core::nn::networks_constructed;

fn call(args: &[&str]) -> (i32, String, String) {
    let (mut o, mut e) = (Vec::new(), Vec::new());
    let code = cli_main(std::iter::once("aris").chain(args.iter().copied()), &mut o, &mut e);
    (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
}

#[test]
fn run_random_arm_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("a.cfg");
    std::fs::write(&cfg, "# minimal\nseed = 3\n").unwrap();
    let out = dir.path().join("r.csv");
    let (code, _, err) = call(&["run", "--config", cfg.to_str().unwrap(), "--arm", "random", "--steps", "10", "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    let rows = parse_csv(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r.arm == Arm::Random && r.seed == 3));
}

#[test]
fn three_step_run_has_four_lines() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let (code, _, err) = call(&["run", "--arm", "aris", "--steps", "3", "--set", "snapshot_window=4", "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert_eq!(text.lines().next().unwrap(), "step,sim_time_s,true_rate,estimated_rate,reward,epsilon,eta,action,arm,seed");
}

#[test]
fn cli_error_codes() {
    assert_ne!(call(&["bogus"]).0, EXIT_OK);
    assert_eq!(call(&["bogus"]).0, EXIT_USAGE);
    assert_eq!(call(&["run", "--unknown-flag"]).0, EXIT_USAGE);
    let (code, _, err) = call(&["run", "--config", "/definitely/missing.cfg"]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("missing.cfg"));
}

#[test]
fn grad_check_subcommand_passes() {
    let (code, out, _) = call(&["grad-check"]);
    assert_eq!(code, EXIT_OK, "{out}");
    assert!(out.contains("PASS"));
}

#[test]
fn selftest_subcommand_passes() {
    let (code, out, _) = call(&["selftest"]);
    assert_eq!(code, EXIT_OK, "{out}");
    assert!(!out.contains("FAIL"));
}

#[test]
fn sweep_is_ordered_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let (code, _, err) = call(&["sweep", "--arms", "random,aris_ref2", "--seeds", "1,2", "--steps", "4", "--set", "snapshot_window=4", "--out", out.to_str().unwrap()]);
        assert_eq!(code, EXIT_OK, "{err}");
    }
    let text = std::fs::read(&a).unwrap();
    assert_eq!(text, std::fs::read(&b).unwrap());
    let rows = parse_csv(std::str::from_utf8(&text).unwrap()).unwrap();
    let order: Vec<(Arm, u64)> = rows.chunks(4).map(|c| (c[0].arm, c[0].seed)).collect();
    assert_eq!(order, vec![(Arm::Random, 1), (Arm::Random, 2), (Arm::ArisRef2, 1), (Arm::ArisRef2, 2)]);
}

#[test]
fn random_arm_is_stationary_on_a_static_channel() {
    // first-half minus second-half mean per seed; the average over 20 seeds
    // must stay within three standard errors of zero
    let diffs: Vec<f64> = (1..=20)
        .map(|seed| {
            let cfg = ExperimentConfig { arm: Arm::Random, seed, steps: 200, ..ExperimentConfig::default() };
            let r = run_episode(&cfg).unwrap();
            let m = |rows: &[aris_core::harness::MetricsRow]| rows.iter().map(|x| x.true_rate).sum::<f64>() / rows.len() as f64;
            m(&r.rows[..100]) - m(&r.rows[100..])
        })
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() < 3.0 * sd / n.sqrt(), "mean difference {mean} vs standard error {}", sd / n.sqrt());
}

#[test]
fn random_arm_never_builds_a_network() {
    let before = networks_constructed();
    run_episode(&ExperimentConfig { arm: Arm::Random, steps: 20, ..ExperimentConfig::default() }).unwrap();
    assert_eq!(networks_constructed(), before);
}
