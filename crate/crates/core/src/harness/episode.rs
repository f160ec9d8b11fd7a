//! The per-step simulation loop and its four arms.
//!
//! RNG splitting rule: the scenario (positions, clusters, headings) is drawn from
//! `ChaCha8Rng::seed_from_u64(seed)` on stream 0, so every arm of one seed sees
//! the same scenario. Everything else in a run (symbols, noise, network init,
//! exploration, minibatch shuffling, random phases) comes from the same seed on
//! stream [`Arm::stream`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Arm, ExperimentConfig};
use crate::agent::{Agent, AgentState};
use crate::geometry::{advance_mobility, ChannelSet, ScenarioGeometry};
use crate::linalg::CVector;
use crate::nn::QNetwork;
use crate::phy::{draw_symbols, effective_matrix, mmse_precoder, ris_sense_bs, ris_sense_ue, sensing_indices, PhaseShiftVector};
use crate::rate::{estimate_from_observations, true_sum_rate};
use crate::recovery::{recover_all, AngleGrid};
use crate::{agent::build_state, Result};

/// One CSV line. Fields that an arm does not produce are NaN (and `action` is -1).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    /// s
    pub sim_time: f64,
    pub true_rate: f64,
    pub estimated_rate: f64,
    /// Reward of the previous decision, observed at this step.
    pub reward: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub action: i64,
    pub arm: Arm,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub rows: Vec<MetricsRow>,
    /// Final network; `None` for the random arm.
    pub network: Option<QNetwork>,
    /// Non-fatal events worth a look (degenerate windows, floored rewards).
    pub anomalies: Vec<String>,
}

/// Full-aperture observations of one window, one vector per snapshot.
struct Window {
    bs: Vec<CVector>,
    ues: Vec<Vec<CVector>>,
}

fn scenario(config: &ExperimentConfig) -> ScenarioGeometry {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    config.layout.sample(&mut rng)
}

/// Runs `config.arm` for `config.steps` steps.
pub fn run_episode(config: &ExperimentConfig) -> Result<RunResult> {
    config.validate()?;
    let tx = config.tx();
    tx.validate()?;
    let l = &config.layout;
    let n = l.ris_hor * l.ris_ver;
    let k = l.num_ues;
    let layout = sensing_indices(l.ris_hor, l.ris_ver, &config.sensing)?;
    let grid = AngleGrid::uniform(config.grid_hor, config.grid_ver, l.ris_hor, l.ris_ver, &layout)?;

    let mut geom = scenario(config);
    geom.validate()?;
    let mut channels = ChannelSet::build(&geom)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(config.arm.stream());

    let mut agent = match config.arm {
        Arm::Random => None,
        _ => Some(Agent::new(config.agent.clone(), n, k, &mut rng)?),
    };
    let mut v = PhaseShiftVector::ones(n);
    let mut rows = Vec::with_capacity(config.steps);
    let mut anomalies = Vec::new();

    for step in 0..config.steps {
        let h_eff = effective_matrix(&channels.h_r, &v, &channels.h)?;
        let precoder = mmse_precoder(&h_eff, &tx)?;
        let true_rate = true_sum_rate(&h_eff, &precoder, &tx)?;
        let mut row = MetricsRow {
            step,
            sim_time: step as f64 * config.step_period,
            true_rate,
            estimated_rate: f64::NAN,
            reward: f64::NAN,
            epsilon: f64::NAN,
            eta: f64::NAN,
            action: -1,
            arm: config.arm,
            seed: config.seed,
        };

        match agent.as_mut() {
            None => v = PhaseShiftVector::random(&mut rng, n),
            Some(agent) => {
                // T_obs UL/DL exchanges sensed at the RIS
                let mut partial = Window { bs: Vec::new(), ues: vec![Vec::new(); k] };
                let mut clean = Window { bs: Vec::new(), ues: vec![Vec::new(); k] };
                for _ in 0..config.snapshot_window {
                    let sym = draw_symbols(&mut rng, k, &tx);
                    let s = ris_sense_bs(&channels.h_r, &precoder, &sym.downlink, &layout, tx.noise_var, &mut rng);
                    partial.bs.push(s.partial);
                    clean.bs.push(s.clean_full);
                    for u in 0..k {
                        let s = ris_sense_ue(&channels.h[u], sym.uplink[u], &layout, tx.noise_var, &mut rng);
                        partial.ues[u].push(s.partial);
                        clean.ues[u].push(s.clean_full);
                    }
                }
                let observed = if config.arm == Arm::Aris {
                    let rec = recover_all(&partial.bs, &partial.ues, &grid, config.bs_paths, config.ue_paths, config.beta_estimator)?;
                    if rec.bs.zero_energy || rec.ues.iter().any(|u| u.zero_energy) {
                        anomalies.push(format!("step {step}: zero-energy sensing window"));
                    }
                    let take = |o: &crate::recovery::SourceRecovery| o.observations.iter().map(|x| x.y_hat.clone()).collect::<Vec<_>>();
                    Window {
                        bs: take(&rec.bs),
                        ues: rec.ues.iter().map(take).collect(),
                    }
                } else {
                    clean
                };
                let (estimated, _) = estimate_from_observations(&observed.bs, &observed.ues, &v, &tx)?;
                row.estimated_rate = estimated;
                let basis = if config.arm == Arm::ArisRef1 { true_rate } else { estimated };
                if !basis.is_finite() {
                    return Err(crate::Error::NonFinite(format!("rate at step {step}")));
                }

                let states = (0..config.snapshot_window)
                    .map(|t| {
                        let ues: Vec<CVector> = observed.ues.iter().map(|u| u[t].clone()).collect();
                        build_state(&observed.bs[t], &ues, &v)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let state = AgentState::mean(&states)?;
                let floored_before = agent.zero_rate_events;
                let (next_v, decision) = agent.act(state, basis, &v, &mut rng)?;
                if agent.zero_rate_events > floored_before {
                    anomalies.push(format!("step {step}: previous rate was zero, reward floor used"));
                }
                row.reward = decision.reward.unwrap_or(f64::NAN);
                row.epsilon = decision.epsilon;
                row.eta = decision.eta;
                row.action = decision.action as i64;
                v = next_v;
            }
        }
        rows.push(row);

        if l.speed > 0.0 {
            geom = advance_mobility(&geom, config.step_period)?;
            channels = ChannelSet::build(&geom)?;
        }
    }

    Ok(RunResult {
        rows,
        network: agent.map(|a| a.network),
        anomalies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::networks_constructed;

    fn small(arm: Arm, steps: usize) -> ExperimentConfig {
        ExperimentConfig {
            arm,
            steps,
            snapshot_window: 8,
            grid_hor: 16,
            grid_ver: 16,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn one_row_per_step_with_monotone_index() {
        for arm in Arm::ALL {
            let r = run_episode(&small(arm, 5)).unwrap();
            assert_eq!(r.rows.len(), 5);
            assert!(r.rows.iter().enumerate().all(|(i, row)| row.step == i && row.arm == arm));
            assert!(r.rows.iter().all(|row| row.true_rate.is_finite() && row.true_rate >= 0.0));
        }
    }

    #[test]
    fn random_arm_builds_no_network() {
        let before = networks_constructed();
        let r = run_episode(&small(Arm::Random, 5)).unwrap();
        assert_eq!(networks_constructed(), before);
        assert!(r.network.is_none());
        assert!(r.rows.iter().all(|row| row.action == -1 && row.estimated_rate.is_nan()));
    }

    #[test]
    fn same_seed_same_rows() {
        let cfg = small(Arm::Aris, 6);
        let a = run_episode(&cfg).unwrap();
        let b = run_episode(&cfg).unwrap();
        assert_eq!(format!("{:?}", a.rows), format!("{:?}", b.rows));
    }

    #[test]
    fn arms_of_one_seed_share_the_first_channel() {
        // v starts at all-ones, so step 0 sees the same effective channel in every arm
        let first: Vec<f64> = Arm::ALL.iter().map(|&a| run_episode(&small(a, 1)).unwrap().rows[0].true_rate).collect();
        assert!(first.windows(2).all(|w| w[0] == w[1]), "{first:?}");
    }

    #[test]
    fn reference_arm_rewards_follow_true_rate() {
        let r = run_episode(&small(Arm::ArisRef1, 4)).unwrap();
        for w in r.rows.windows(2) {
            let expected = crate::agent::reward(w[1].true_rate, w[0].true_rate, 1e-9);
            assert_eq!(w[1].reward, expected);
        }
    }

    #[test]
    fn estimated_rate_based_arms_reward_the_estimate() {
        for arm in [Arm::Aris, Arm::ArisRef2] {
            let r = run_episode(&small(arm, 4)).unwrap();
            assert!(r.rows[0].reward.is_nan());
            for w in r.rows.windows(2) {
                let expected = crate::agent::reward(w[1].estimated_rate, w[0].estimated_rate, 1e-9);
                assert_eq!(w[1].reward, expected);
            }
        }
    }

    #[test]
    fn mobility_changes_the_channel() {
        let still = run_episode(&small(Arm::Random, 3)).unwrap();
        let mut moving = small(Arm::Random, 3);
        moving.layout.speed = 50.0;
        moving.step_period = 0.1;
        let moving = run_episode(&moving).unwrap();
        // same stream, same random phases; only the positions differ after step 0
        assert_eq!(still.rows[0].true_rate, moving.rows[0].true_rate);
        assert_ne!(still.rows[2].true_rate, moving.rows[2].true_rate);
    }
}
