//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 usage error, 2 configuration error, 3 runtime or
//! numeric error (including a failed check in `grad-check` or `selftest`).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use super::config::{Arm, ExperimentConfig};
use super::csv::emit_csv;
use super::episode::{run_episode, RunResult};
use super::selftest::{grad_check_default, run_selftest};
use crate::nn::gradcheck::TOLERANCE;
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "aris", about = "Autonomous hybrid RIS simulation lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Configuration file (`key = value` lines); defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set speed=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    steps: Option<usize>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one arm for one seed and write its CSV.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        arm: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also save the final network parameters here.
        #[arg(long)]
        params_out: Option<PathBuf>,
    },
    /// Run several arms and seeds in parallel into one CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated arms.
        #[arg(long, default_value = "aris,aris_ref1,aris_ref2,random")]
        arms: String,
        /// Comma-separated seeds or an inclusive range `a..=b`.
        #[arg(long, default_value = "1..=10")]
        seeds: String,
    },
    /// Finite-difference check of the default network's gradients.
    GradCheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Fast invariant suite.
    Selftest,
    /// Print a complete, commented configuration file with the defaults.
    DefaultConfig,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::default(),
    };
    for o in &common.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("--set expects KEY=VALUE, got `{o}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = common.steps {
        cfg.steps = s;
    }
    if let Some(p) = &common.out {
        cfg.output = p.clone();
    }
    Ok(cfg)
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::Config(format!("cannot parse seeds `{text}`"));
    if let Some((a, b)) = text.split_once("..=") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn create(path: &PathBuf) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", path.display())))
}

fn execute(cmd: Command, out: &mut dyn Write) -> Result<bool, Failure> {
    let io = |e: std::io::Error| Failure::Runtime(e.to_string());
    match cmd {
        Command::Run { common, arm, seed, params_out } => {
            let mut cfg = load(&common)?;
            if let Some(a) = arm {
                cfg.arm = a.parse()?;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let result = run_episode(&cfg)?;
            emit_csv(&result.rows, create(&cfg.output)?, true)?;
            if let (Some(path), Some(net)) = (params_out, &result.network) {
                crate::nn::io::save_to_path(net, &path)?;
            }
            for a in &result.anomalies {
                writeln!(out, "note: {a}").map_err(io)?;
            }
            writeln!(out, "wrote {} rows to {}", result.rows.len(), cfg.output.display()).map_err(io)?;
            Ok(true)
        }
        Command::Sweep { common, arms, seeds } => {
            let base = load(&common)?;
            let arms: Vec<Arm> = arms.split(',').map(|a| a.trim().parse()).collect::<crate::Result<_>>()?;
            let seeds = parse_seeds(&seeds)?;
            let jobs: Vec<ExperimentConfig> = arms
                .iter()
                .flat_map(|&arm| seeds.iter().map(move |&seed| (arm, seed)))
                .map(|(arm, seed)| ExperimentConfig { arm, seed, ..base.clone() })
                .collect();
            for j in &jobs {
                j.validate()?;
            }
            // collected in job order, so the file does not depend on scheduling
            let results: Vec<crate::Result<RunResult>> = jobs.par_iter().map(run_episode).collect();
            let mut w = create(&base.output)?;
            for (i, r) in results.into_iter().enumerate() {
                emit_csv(&r?.rows, &mut w, i == 0)?;
            }
            writeln!(out, "wrote {} runs to {}", jobs.len(), base.output.display()).map_err(io)?;
            Ok(true)
        }
        Command::GradCheck { seed } => {
            let r = grad_check_default(seed)?;
            writeln!(
                out,
                "checked {} parameters, skipped {} at activation kinks, max relative error {:.3e} (tolerance {TOLERANCE:.0e})",
                r.checked, r.skipped_kinks, r.max_rel_error
            )
            .map_err(io)?;
            writeln!(out, "{}", if r.passed() { "PASS" } else { "FAIL" }).map_err(io)?;
            Ok(r.passed())
        }
        Command::Selftest => {
            let checks = run_selftest();
            for c in &checks {
                writeln!(out, "{} {}  {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail).map_err(io)?;
            }
            Ok(checks.iter().all(|c| c.passed))
        }
        Command::DefaultConfig => {
            write!(out, "{}", ExperimentConfig::default().to_text()).map_err(io)?;
            Ok(true)
        }
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn cli_main<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_RUNTIME,
        Err(Failure::Config(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_CONFIG
        }
        Err(Failure::Runtime(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_RUNTIME
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let code = cli_main(std::iter::once("aris").chain(args.iter().copied()), &mut o, &mut e);
        (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(call(&["frobnicate"]).0, EXIT_USAGE);
        assert_eq!(call(&["run", "--bogus"]).0, EXIT_USAGE);
        assert_eq!(call(&[]).0, EXIT_USAGE);
        let (code, out, _) = call(&["--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("grad-check"));
    }

    #[test]
    fn config_errors_exit_two() {
        assert_eq!(call(&["run", "--config", "/nonexistent/aris.cfg"]).0, EXIT_CONFIG);
        assert_eq!(call(&["run", "--arm", "best"]).0, EXIT_CONFIG);
        assert_eq!(call(&["run", "--set", "gamma=2"]).0, EXIT_CONFIG);
        assert_eq!(call(&["run", "--steps", "0"]).0, EXIT_CONFIG);
        assert_eq!(call(&["sweep", "--seeds", "5..=1"]).0, EXIT_CONFIG);
    }

    #[test]
    fn seed_lists_and_ranges() {
        assert_eq!(parse_seeds("3..=5").ok(), Some(vec![3, 4, 5]));
        assert_eq!(parse_seeds("1, 9").ok(), Some(vec![1, 9]));
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn default_config_parses_back() {
        let (code, out, _) = call(&["default-config"]);
        assert_eq!(code, EXIT_OK);
        assert_eq!(ExperimentConfig::parse(&out).unwrap(), ExperimentConfig::default());
    }
}
