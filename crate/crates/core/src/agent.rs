//! The deep-Q decision loop: state construction, ε-greedy selection over a DFT
//! action set, phase update, reward, target construction and replay training.

use std::collections::VecDeque;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::linalg::{dft_matrix, CMatrix, CVector};
use crate::nn::gradcheck::{selected_loss, selected_loss_grad};
use crate::nn::{AdamConfig, Architecture, Batch, NetworkShape, QNetwork};
use crate::phy::PhaseShiftVector;
use crate::{Error, Result};

/// `s1` concatenates one N-block per user; `s2` is the DFT magnitude of `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
}

impl AgentState {
    /// Entrywise mean of several states (the per-snapshot states of one window).
    pub fn mean(states: &[AgentState]) -> Result<AgentState> {
        let first = states.first().ok_or_else(|| Error::InvalidArgument("no states to average".into()))?;
        let n = states.len() as f64;
        let mut s1 = vec![0.0; first.s1.len()];
        let mut s2 = vec![0.0; first.s2.len()];
        for s in states {
            if s.s1.len() != s1.len() || s.s2.len() != s2.len() {
                return Err(Error::Dimension("states differ in shape".into()));
            }
            s1.iter_mut().zip(&s.s1).for_each(|(a, b)| *a += b / n);
            s2.iter_mut().zip(&s.s2).for_each(|(a, b)| *a += b / n);
        }
        Ok(AgentState { s1, s2 })
    }

    /// The inputs the network sees: `s1` rescaled to unit RMS so that the
    /// absolute received-power scale (which spans many decades) does not swamp
    /// batch normalization. `s2` already has unit RMS for unit-modulus `v`.
    pub fn network_input(&self) -> (Vec<f64>, Vec<f64>) {
        let rms = |x: &[f64]| (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
        let scale = |x: &[f64]| {
            let r = rms(x);
            if r > 0.0 && r.is_finite() {
                x.iter().map(|v| v / r).collect()
            } else {
                x.to_vec()
            }
        };
        (scale(&self.s1), self.s2.clone())
    }
}

fn modulus_of_dft(x: &[Complex64]) -> Vec<f64> {
    crate::linalg::unitary_dft(x).iter().map(|c| c.norm()).collect()
}

/// `s1,k = |DFT(conj(ŷ_R) ⊙ v ⊙ ŷ_k)|` for every user, and `s2 = |DFT(v)|`.
pub fn build_state(y_r: &CVector, y_ues: &[CVector], v: &PhaseShiftVector) -> Result<AgentState> {
    let n = v.len();
    if y_r.len() != n || y_ues.iter().any(|y| y.len() != n) {
        return Err(Error::Dimension("observations and phase vector differ in length".into()));
    }
    let mut s1 = Vec::with_capacity(n * y_ues.len());
    for y_k in y_ues {
        let prod: Vec<Complex64> = (0..n).map(|i| y_r[i].conj() * v.as_vector()[i] * y_k[i]).collect();
        s1.extend(modulus_of_dft(&prod));
    }
    let s2 = modulus_of_dft(v.as_vector().as_slice());
    Ok(AgentState { s1, s2 })
}

/// 1 at the (first) maximum, 0 elsewhere.
pub fn one_hot_indicator(q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; q.len()];
    if !q.is_empty() {
        out[argmax(q)] = 1.0;
    }
    out
}

/// Index of the maximum, ties to the lowest index.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in q.iter().enumerate() {
        if *v > q[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy choice. Always consumes one uniform draw so the stream position
/// does not depend on the Q-values.
pub fn select_action<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> (usize, bool) {
    let u: f64 = rng.random();
    if u < epsilon {
        (rng.random_range(0..q.len()), true)
    } else {
        (argmax(q), false)
    }
}

/// `η = 0.1 |ΔR̂| + 0.01`.
pub fn adaptive_eta(delta_rate: f64) -> f64 {
    0.1 * delta_rate.abs() + 0.01
}

/// How the DFT action columns are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionScale {
    /// Columns of the unitary DFT (entries of modulus `1/sqrt(N)`).
    Unitary,
    /// Unit-modulus entries (the unitary columns times `sqrt(N)`).
    UnitModulus,
}

/// Candidate update directions `V̇`, one column per action.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSet {
    pub directions: CMatrix,
}

impl ActionSet {
    pub fn dft(n: usize, scale: ActionScale) -> Self {
        let mut directions = dft_matrix(n);
        if scale == ActionScale::UnitModulus {
            directions *= Complex64::new((n as f64).sqrt(), 0.0);
        }
        Self { directions }
    }

    pub fn len(&self) -> usize {
        self.directions.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.ncols() == 0
    }

    pub fn direction(&self, a: usize) -> CVector {
        self.directions.column(a).into_owned()
    }
}

/// `v' = exp(j·angle(v + η V̇ e_a))`. An entry whose sum vanishes keeps its old phase.
pub fn update_phase(v: &PhaseShiftVector, action: usize, eta: f64, actions: &ActionSet) -> Result<PhaseShiftVector> {
    if action >= actions.len() || actions.directions.nrows() != v.len() {
        return Err(Error::Dimension(format!("action {action} does not fit the action set")));
    }
    let dir = actions.directions.column(action);
    let next = CVector::from_iterator(
        v.len(),
        v.as_vector().iter().zip(dir.iter()).map(|(vi, di)| {
            let w = vi + di * eta;
            let m = w.norm();
            if m > 0.0 && m.is_finite() {
                w / m
            } else {
                *vi
            }
        }),
    );
    PhaseShiftVector::new(next)
}

/// `r = R̂' / R̂`, with `floor` replacing a zero (or negative) previous rate.
pub fn reward(next_rate: f64, rate: f64, floor: f64) -> f64 {
    next_rate / if rate > 0.0 { rate } else { floor }
}

/// `q` with entry `a` replaced by `r + γ max(q')`.
pub fn target_q(q: &[f64], q_next: &[f64], action: usize, r: f64, gamma: f64) -> Vec<f64> {
    let max_next: f64 = q_next.iter().zip(one_hot_indicator(q_next)).map(|(a, b)| a * b).sum();
    let mut out = q.to_vec();
    out[action] = r + gamma * max_next;
    out
}

/// `(η/σ)(q̃ − m) + 1/(1−γ)` with population mean and standard deviation; a
/// constant input maps to the constant `1/(1−γ)`.
pub fn normalize_target(q_tilde: &[f64], eta: f64, gamma: f64) -> Vec<f64> {
    let n = q_tilde.len() as f64;
    let offset = 1.0 / (1.0 - gamma);
    let mean = q_tilde.iter().sum::<f64>() / n;
    let std = (q_tilde.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(std > 0.0) {
        return vec![offset; q_tilde.len()];
    }
    q_tilde.iter().map(|x| eta / std * (x - mean) + offset).collect()
}

/// `|q̌_a − q_a|²`.
pub fn td_loss(q_check: &[f64], q_pred: &[f64], action: usize) -> f64 {
    (q_check[action] - q_pred[action]).powi(2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: AgentState,
    pub action: usize,
    pub reward: f64,
    pub next_state: AgentState,
    pub q: Vec<f64>,
    pub q_next: Vec<f64>,
    pub eta: f64,
}

/// `ε_t = max(floor, start · decay^t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub decay: f64,
    pub floor: f64,
}

impl EpsilonSchedule {
    pub fn at(&self, step: u64) -> f64 {
        (self.start * self.decay.powf(step as f64)).max(self.floor)
    }
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            decay: 0.99,
            floor: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub train_period: usize,
    pub passes: usize,
    pub reward_floor: f64,
    /// Recompute `q` and `q'` with the current parameters at training time
    /// instead of using the values frozen at decision time.
    pub recompute_q: bool,
    pub action_scale: ActionScale,
    pub optimizer: AdamConfig,
    pub network: NetworkShape,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            epsilon: EpsilonSchedule::default(),
            replay_capacity: 2048,
            batch_size: 64,
            train_period: 32,
            passes: 2,
            reward_floor: 1e-9,
            recompute_q: false,
            action_scale: ActionScale::Unitary,
            optimizer: AdamConfig::default(),
            network: NetworkShape::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let eps = &self.epsilon;
        let ok = (0.0..1.0).contains(&self.gamma)
            && (0.0..=1.0).contains(&eps.start)
            && (0.0..=1.0).contains(&eps.floor)
            && eps.decay > 0.0
            && eps.decay <= 1.0
            && self.replay_capacity > 0
            && self.batch_size > 0
            && self.train_period > 0
            && self.passes > 0
            && self.reward_floor > 0.0
            && self.optimizer.learning_rate > 0.0
            && self.network.width_a > 0
            && self.network.width_b > 0
            && self.network.head_width > 0;
        if !ok {
            return Err(Error::Config(format!("invalid agent configuration: {self:?}")));
        }
        Ok(())
    }
}

/// FIFO replay memory of bounded capacity.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(4096)),
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainStats {
    pub minibatches: usize,
    pub mean_loss: f64,
}

/// Shuffles the buffer and takes one optimizer step per minibatch, for
/// `config.passes` passes.
pub fn train_cycle<R: Rng + ?Sized>(net: &mut QNetwork, buffer: &ReplayBuffer, config: &AgentConfig, rng: &mut R) -> Result<TrainStats> {
    if buffer.is_empty() {
        return Ok(TrainStats::default());
    }
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    let mut stats = TrainStats::default();
    let mut loss_sum = 0.0;
    for _ in 0..config.passes {
        order.shuffle(rng);
        for chunk in order.chunks(config.batch_size) {
            let mut s1 = Vec::with_capacity(chunk.len());
            let mut s2 = Vec::with_capacity(chunk.len());
            let mut actions = Vec::with_capacity(chunk.len());
            let mut targets = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let t = buffer.get(i);
                let (a, b) = t.state.network_input();
                let (q, q_next) = if config.recompute_q {
                    let (na, nb) = t.next_state.network_input();
                    (net.q_values(&a, &b)?, net.q_values(&na, &nb)?)
                } else {
                    (t.q.clone(), t.q_next.clone())
                };
                let q_tilde = target_q(&q, &q_next, t.action, t.reward, config.gamma);
                let q_check = normalize_target(&q_tilde, t.eta, config.gamma);
                s1.push(a);
                s2.push(b);
                actions.push(t.action);
                targets.push(q_check[t.action]);
            }
            let (s1, s2) = (Batch::from_rows(&s1)?, Batch::from_rows(&s2)?);
            let (q_pred, cache) = net.forward_train(&s1, &s2, rng)?;
            let rows = chunk.len() as f64;
            let mut upstream = selected_loss_grad(&q_pred, &actions, &targets);
            upstream.data.iter_mut().for_each(|g| *g /= rows);
            let grads = net.backward(&cache, &upstream)?;
            net.optimizer_step(&grads)?;
            loss_sum += selected_loss(&q_pred, &actions, &targets) / rows;
            stats.minibatches += 1;
        }
    }
    stats.mean_loss = loss_sum / stats.minibatches as f64;
    Ok(stats)
}

/// Decision taken at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub action: usize,
    pub eta: f64,
    pub epsilon: f64,
    pub explored: bool,
    /// Reward of the previous decision, known once this step's rate is in.
    pub reward: Option<f64>,
    pub trained: Option<TrainStats>,
}

#[derive(Debug, Clone)]
struct Pending {
    state: AgentState,
    action: usize,
    q: Vec<f64>,
    eta: f64,
    rate: f64,
}

/// The learning agent: network, action set, replay memory and the previous decision.
#[derive(Debug, Clone)]
pub struct Agent {
    pub config: AgentConfig,
    pub network: QNetwork,
    pub actions: ActionSet,
    pub replay: ReplayBuffer,
    pending: Option<Pending>,
    steps: u64,
    /// Steps where the previous rate was zero and the floor was used.
    pub zero_rate_events: u64,
}

impl Agent {
    /// Builds the default two-pipeline network for `users` users and `n` elements.
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, n: usize, users: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let actions = ActionSet::dft(n, config.action_scale);
        let arch = Architecture::with_shape(n * users, n, actions.len(), &config.network);
        let network = QNetwork::new(arch, config.optimizer, rng)?;
        Ok(Self {
            replay: ReplayBuffer::new(config.replay_capacity),
            config,
            network,
            actions,
            pending: None,
            steps: 0,
            zero_rate_events: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One decision: records the previous transition, picks an action, moves `v`
    /// and trains when the period elapses.
    pub fn act<R: Rng + ?Sized>(&mut self, state: AgentState, rate: f64, v: &PhaseShiftVector, rng: &mut R) -> Result<(PhaseShiftVector, Decision)> {
        let (a, b) = state.network_input();
        let q = self.network.q_values(&a, &b)?;
        let mut r = None;
        let delta = match self.pending.take() {
            Some(p) => {
                if !(p.rate > 0.0) {
                    self.zero_rate_events += 1;
                }
                let rw = reward(rate, p.rate, self.config.reward_floor);
                r = Some(rw);
                self.replay.push(Transition {
                    state: p.state,
                    action: p.action,
                    reward: rw,
                    next_state: state.clone(),
                    q: p.q,
                    q_next: q.clone(),
                    eta: p.eta,
                });
                rate - p.rate
            }
            None => 0.0,
        };
        let eta = adaptive_eta(delta);
        let epsilon = self.config.epsilon.at(self.steps);
        let (action, explored) = select_action(&q, epsilon, rng);
        let next_v = update_phase(v, action, eta, &self.actions)?;
        self.pending = Some(Pending { state, action, q, eta, rate });
        self.steps += 1;
        let trained = if self.steps % self.config.train_period as u64 == 0 && !self.replay.is_empty() {
            Some(train_cycle(&mut self.network, &self.replay, &self.config, rng)?)
        } else {
            None
        };
        Ok((
            next_v,
            Decision {
                action,
                eta,
                epsilon,
                explored,
                reward: r,
                trained,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cis, complex_gaussian_vector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    use std::f64::consts::PI;

    fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> PhaseShiftVector {
        PhaseShiftVector::random(rng, n)
    }

    #[test]
    fn state_ignores_global_phases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let yr = complex_gaussian_vector(&mut rng, 32, 1.0);
        let ys = vec![complex_gaussian_vector(&mut rng, 32, 1.0), complex_gaussian_vector(&mut rng, 32, 1.0)];
        let v = random_unit(&mut rng, 32);
        let base = build_state(&yr, &ys, &v).unwrap();
        let rot = |x: &CVector, p: f64| x * cis(p);
        let s = build_state(&rot(&yr, 0.7), &ys, &v).unwrap();
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(&s.s1, &base.s1) && close(&s.s2, &base.s2));
        let s = build_state(&yr, &[rot(&ys[0], -2.0), ys[1].clone()], &v).unwrap();
        assert!(close(&s.s1, &base.s1));
        let vr = PhaseShiftVector::new(rot(v.as_vector(), 1.3)).unwrap();
        let s = build_state(&yr, &ys, &vr).unwrap();
        assert!(close(&s.s1, &base.s1) && close(&s.s2, &base.s2));
        assert!(base.s1.iter().chain(&base.s2).all(|x| *x >= 0.0));
    }

    #[test]
    fn all_ones_v_is_an_impulse() {
        let s = build_state(&CVector::zeros(32), &[CVector::zeros(32)], &PhaseShiftVector::ones(32)).unwrap();
        assert!((s.s2[0] - 32f64.sqrt()).abs() < 1e-12);
        assert!(s.s2[1..].iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn dft_column_product_gives_one_hot_block() {
        let n = 32;
        let col = 5;
        // conj(y_R) ⊙ v ⊙ y_k equals column `col` of the unitary DFT
        let target: Vec<Complex64> = (0..n).map(|i| cis(-2.0 * PI * (i * col) as f64 / n as f64) / (n as f64).sqrt()).collect();
        let yr = CVector::from_element(n, Complex64::new(1.0, 0.0));
        let yk = CVector::from_vec(target);
        let s = build_state(&yr, &[yk], &PhaseShiftVector::ones(n)).unwrap();
        // the forward DFT of a conjugate-exponential column peaks at bin `col`
        let peak = argmax(&s.s1);
        let oracle: Vec<f64> = (0..n)
            .map(|m| {
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..n {
                    acc += cis(-2.0 * PI * (i * col) as f64 / n as f64) / (n as f64).sqrt() * cis(-2.0 * PI * (i * m) as f64 / n as f64);
                }
                (acc / (n as f64).sqrt()).norm()
            })
            .collect();
        let oracle_peak = argmax(&oracle);
        assert_eq!(peak, oracle_peak);
        assert!((s.s1[peak] - 1.0).abs() < 1e-12);
        assert!(s.s1.iter().enumerate().all(|(i, x)| i == peak || x.abs() < 1e-12));
    }

    #[test]
    fn indicator_cases() {
        assert_eq!(one_hot_indicator(&[1.0, 3.0, 2.0]), vec![0.0, 1.0, 0.0]);
        assert_eq!(one_hot_indicator(&[2.0, 2.0]), vec![1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn indicator_picks_the_max(q in proptest::collection::vec(-1e3f64..1e3, 1..40)) {
            let dot: f64 = q.iter().zip(one_hot_indicator(&q)).map(|(a, b)| a * b).sum();
            let max = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(dot, max);
        }

        #[test]
        fn normalized_target_moments(q in proptest::collection::vec(-1e3f64..1e3, 2..40), eta in 1e-3f64..1.0, gamma in 0.0f64..0.99) {
            let out = normalize_target(&q, eta, gamma);
            let n = out.len() as f64;
            let mean = out.iter().sum::<f64>() / n;
            let std = (out.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!((mean - 1.0 / (1.0 - gamma)).abs() < 1e-9);
            let spread = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - q.iter().cloned().fold(f64::INFINITY, f64::min);
            if spread > 1e-6 {
                prop_assert!((std - eta).abs() < 1e-9);
            }
        }

        #[test]
        fn phase_updates_stay_unit_modulus(seed in 0u64..1000, a in 0usize..32, eta in 0.0f64..10.0, steps in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let actions = ActionSet::dft(32, ActionScale::UnitModulus);
            let mut v = random_unit(&mut rng, 32);
            for _ in 0..steps {
                v = update_phase(&v, a, eta, &actions).unwrap();
            }
            prop_assert!(v.as_vector().iter().all(|x| (x.norm() - 1.0).abs() <= 1e-12));
        }

        #[test]
        fn target_touches_one_coordinate(q in proptest::collection::vec(-10f64..10.0, 2..20), r in 0.1f64..3.0, a in 0usize..2) {
            let qn: Vec<f64> = q.iter().rev().cloned().collect();
            let t = target_q(&q, &qn, a, r, 0.9);
            for i in 0..q.len() {
                if i != a {
                    prop_assert_eq!(t[i], q[i]);
                }
            }
        }

        #[test]
        fn reward_is_scale_invariant(a in 0.01f64..100.0, b in 0.01f64..100.0, c in 0.01f64..100.0) {
            let r1 = reward(a, b, 1e-9);
            let r2 = reward(c * a, c * b, 1e-9);
            prop_assert!((r1 - r2).abs() <= 1e-12 * r1.abs());
        }
    }

    #[test]
    fn epsilon_zero_is_greedy_with_low_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            assert_eq!(select_action(&[0.1, 0.5, 0.2], 0.0, &mut rng).0, 1);
            assert_eq!(select_action(&[0.5, 0.5, 0.2], 0.0, &mut rng).0, 0);
        }
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = 32;
        let draws = 100_000;
        let mut counts = vec![0usize; k];
        let q: Vec<f64> = (0..k).map(|i| i as f64).collect();
        for _ in 0..draws {
            counts[select_action(&q, 1.0, &mut rng).0] += 1;
        }
        let expected = draws as f64 / k as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let critical = ChiSquared::new((k - 1) as f64).unwrap().inverse_cdf(0.99);
        assert!(chi2 < critical, "chi2 {chi2} >= {critical}");
    }

    #[test]
    fn eta_values() {
        assert!((adaptive_eta(0.0) - 0.01).abs() < 1e-15);
        assert!((adaptive_eta(-0.5) - 0.06).abs() < 1e-15);
        assert!((adaptive_eta(1.0) - 0.11).abs() < 1e-15);
    }

    #[test]
    fn phase_update_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let actions = ActionSet::dft(32, ActionScale::UnitModulus);
        let v = random_unit(&mut rng, 32);
        assert!((update_phase(&v, 7, 0.0, &actions).unwrap().as_vector() - v.as_vector()).norm() < 1e-15);

        // first-order phase change: η Im(Δv_i conj(v_i))
        let eta = 1e-4;
        let next = update_phase(&v, 7, eta, &actions).unwrap();
        let dir = actions.direction(7);
        for i in 0..32 {
            let got = (next.as_vector()[i] * v.as_vector()[i].conj()).arg();
            let want = eta * (dir[i] * v.as_vector()[i].conj()).im;
            if want.abs() > 1e-7 {
                assert!((got - want).abs() / want.abs() < 0.01, "entry {i}: {got} vs {want}");
            }
        }

        // an entry cancelled exactly keeps its phase
        let mut raw = v.as_vector().clone();
        raw[0] = -actions.directions[(0, 0)];
        let v0 = PhaseShiftVector::new(raw).unwrap();
        let next = update_phase(&v0, 0, 1.0, &actions).unwrap();
        assert_eq!(next.as_vector()[0], v0.as_vector()[0]);
    }

    #[test]
    fn action_set_has_full_rank() {
        for scale in [ActionScale::Unitary, ActionScale::UnitModulus] {
            let a = ActionSet::dft(32, scale);
            let sv = a.directions.clone().singular_values();
            assert!(sv.iter().all(|s| *s > 1e-9));
        }
        let u = ActionSet::dft(32, ActionScale::Unitary);
        assert!((u.direction(3).norm() - 1.0).abs() < 1e-12);
        let m = ActionSet::dft(32, ActionScale::UnitModulus);
        assert!(m.direction(3).iter().all(|x| (x.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn reward_cases() {
        assert_eq!(reward(2.0, 2.0, 1e-9), 1.0);
        assert!((reward(2.4, 2.0, 1e-9) - 1.2).abs() < 1e-15);
        assert!((reward(1.0, 0.0, 1e-9) - 1e9).abs() < 1e-6);
    }

    #[test]
    fn target_and_normalization_values() {
        let t = target_q(&[0.0, 0.0, 0.0], &[0.5, 2.0, 1.0], 1, 1.1, 0.9);
        assert!((t[1] - 2.9).abs() < 1e-12);
        assert_eq!(target_q(&[0.3, 0.4], &[5.0, 1.0], 0, 1.7, 0.0)[0], 1.7);

        let q = normalize_target(&[1.0, 2.0, 3.0], 0.1, 0.9);
        let std = (2.0f64 / 3.0).sqrt();
        let want = [10.0 - 0.1 / std, 10.0, 10.0 + 0.1 / std];
        for (a, b) in q.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((q[0] - 9.8775).abs() < 1e-4 && (q[2] - 10.1225).abs() < 1e-4);
        assert!(normalize_target(&[4.0, 4.0, 4.0], 0.1, 0.9).iter().all(|x| (x - 10.0).abs() < 1e-12));
    }

    #[test]
    fn loss_values() {
        assert_eq!(td_loss(&[1.0, 10.0], &[7.0, 10.0], 1), 0.0);
        assert_eq!(td_loss(&[0.0, 10.0, 0.0], &[3.0, 9.5, -1.0], 1), 0.25);
        assert_eq!(td_loss(&[0.0, 10.0, 0.0], &[8.0, 9.5, 4.0], 1), 0.25);
    }

    fn toy_state() -> AgentState {
        AgentState {
            s1: (0..16).map(|i| 0.2 + (i as f64 * 0.37).sin().abs()).collect(),
            s2: (0..8).map(|i| 0.5 + (i as f64 * 0.91).cos().abs()).collect(),
        }
    }

    fn small_config() -> AgentConfig {
        AgentConfig {
            replay_capacity: 256,
            ..AgentConfig::default()
        }
    }

    #[test]
    fn empty_buffer_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut agent = Agent::new(small_config(), 8, 2, &mut rng).unwrap();
        let before = agent.network.clone();
        let stats = train_cycle(&mut agent.network, &ReplayBuffer::new(4), &agent.config, &mut rng).unwrap();
        assert_eq!(stats.minibatches, 0);
        assert_eq!(agent.network, before);
    }

    /// Runs the toy bandit: one state, reward 1.5 for `good`, 1.0 otherwise.
    fn toy_bandit(seed: u64, good: usize, cycles: usize) -> (QNetwork, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = small_config();
        let mut agent = Agent::new(config.clone(), 8, 2, &mut rng).unwrap();
        let state = toy_state();
        let (a, b) = state.network_input();
        for _ in 0..cycles {
            for _ in 0..config.train_period {
                let q = agent.network.q_values(&a, &b).unwrap();
                let action = rng.random_range(0..8);
                let r = if action == good { 1.5 } else { 1.0 };
                agent.replay.push(Transition {
                    state: state.clone(),
                    action,
                    reward: r,
                    next_state: state.clone(),
                    q: q.clone(),
                    q_next: q,
                    eta: 0.5,
                });
            }
            train_cycle(&mut agent.network, &agent.replay, &config, &mut rng).unwrap();
        }
        let q = agent.network.q_values(&a, &b).unwrap();
        (agent.network, argmax(&q))
    }

    #[test]
    fn training_is_deterministic() {
        let (n1, _) = toy_bandit(6, 3, 3);
        let (n2, _) = toy_bandit(6, 3, 3);
        assert_eq!(n1, n2);
    }

    #[test]
    fn toy_bandit_converges_to_rewarded_action() {
        let hits = (0..10).filter(|&seed| toy_bandit(100 + seed, (seed as usize * 3) % 8, 200).1 == (seed as usize * 3) % 8).count();
        assert!(hits >= 9, "{hits}/10 seeds converged");
    }

    #[test]
    fn agent_records_transitions_from_the_second_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut agent = Agent::new(small_config(), 8, 2, &mut rng).unwrap();
        let v = PhaseShiftVector::ones(8);
        let (v1, d0) = agent.act(toy_state(), 2.0, &v, &mut rng).unwrap();
        assert_eq!(d0.reward, None);
        assert_eq!(d0.eta, 0.01);
        assert_eq!(agent.replay.len(), 0);
        let (_, d1) = agent.act(toy_state(), 2.4, &v1, &mut rng).unwrap();
        assert!((d1.reward.unwrap() - 1.2).abs() < 1e-12);
        assert!((d1.eta - 0.05).abs() < 1e-12);
        assert_eq!(agent.replay.len(), 1);
        assert!(d1.epsilon < d0.epsilon);
    }

    #[test]
    fn epsilon_schedule_decays_to_floor() {
        let s = EpsilonSchedule::default();
        assert_eq!(s.at(0), 1.0);
        assert!((s.at(1) - 0.99).abs() < 1e-15);
        assert_eq!(s.at(10_000), 0.05);
    }

    #[test]
    fn network_input_rescales_only_s1() {
        let st = AgentState { s1: vec![3e-9, 4e-9], s2: vec![1.0, 0.0] };
        let (a, b) = st.network_input();
        let rms = (a.iter().map(|x| x * x).sum::<f64>() / 2.0).sqrt();
        assert!((rms - 1.0).abs() < 1e-12);
        assert_eq!(b, st.s2);
    }
}
