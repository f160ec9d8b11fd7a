//! Central finite-difference checks of the hand-derived gradients.

use rand::Rng;

use super::layers::{Batch, Layer, LayerSpec};
use super::network::QNetwork;
use crate::{Error, Result};

pub const STEP: f64 = 1e-5;
/// Denominator floor so parameters with an exactly zero gradient (dense biases
/// feeding a batch norm) are judged on absolute error. At this step a central
/// difference of an O(1) loss resolves derivatives only to about `1e-10..1e-9`
/// (a few ulps of the loss over `2 * STEP`), so the floor makes the absolute
/// tolerance `TOLERANCE * MAGNITUDE_FLOOR = 1e-9` match that resolution.
pub const MAGNITUDE_FLOOR: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (tensor, index) of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
    /// Entries whose perturbation crossed a leaky-ReLU kink, where the derivative is undefined.
    pub skipped_kinks: usize,
}

impl GradCheckReport {
    fn new() -> Self {
        Self {
            max_rel_error: 0.0,
            worst: (0, 0),
            checked: 0,
            skipped_kinks: 0,
        }
    }

    fn record(&mut self, tensor: usize, index: usize, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        self.checked += 1;
        if e > self.max_rel_error || e.is_nan() {
            self.max_rel_error = e;
            self.worst = (tensor, index);
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE && self.checked > 0
    }
}

/// Loss over a batch that touches only the chosen output of each row: `Σ (q[a] - t)²`.
pub fn selected_loss(q: &Batch, actions: &[usize], targets: &[f64]) -> f64 {
    (0..q.rows).map(|r| (q.row(r)[actions[r]] - targets[r]).powi(2)).sum()
}

pub fn selected_loss_grad(q: &Batch, actions: &[usize], targets: &[f64]) -> Batch {
    let mut g = Batch::zeros(q.rows, q.cols);
    for r in 0..q.rows {
        g.row_mut(r)[actions[r]] = 2.0 * (q.row(r)[actions[r]] - targets[r]);
    }
    g
}

/// `L(q⁺) - L(q⁻)` in the factored form `Σ (q⁺ - q⁻)(q⁺ + q⁻ - 2t)`, which avoids
/// cancelling two nearly equal squared losses.
fn selected_loss_difference(plus: &Batch, minus: &Batch, actions: &[usize], targets: &[f64]) -> f64 {
    (0..plus.rows)
        .map(|r| {
            let (a, b) = (plus.row(r)[actions[r]], minus.row(r)[actions[r]]);
            (a - b) * (a + b - 2.0 * targets[r])
        })
        .sum()
}

/// Checks every trainable parameter of `net` with frozen dropout masks.
pub fn check_network(net: &QNetwork, s1: &Batch, s2: &Batch, actions: &[usize], targets: &[f64], rng: &mut impl Rng) -> Result<GradCheckReport> {
    check_network_with_step(net, s1, s2, actions, targets, STEP, rng)
}

/// [`check_network`] with an explicit finite-difference step.
pub fn check_network_with_step(
    net: &QNetwork,
    s1: &Batch,
    s2: &Batch,
    actions: &[usize],
    targets: &[f64],
    step: f64,
    rng: &mut impl Rng,
) -> Result<GradCheckReport> {
    if actions.len() != s1.rows || targets.len() != s1.rows {
        return Err(Error::Dimension("one action and target per row".into()));
    }
    // the working copy's running statistics drift; the caller's network is untouched
    let mut work = net.clone();
    let (q, cache) = work.forward_train(s1, s2, rng)?;
    let masks = cache.dropout_masks();
    let base_kinks = cache.kink_signature();
    let analytic = work.backward(&cache, &selected_loss_grad(&q, actions, targets))?;

    let mut report = GradCheckReport::new();
    let shapes: Vec<usize> = work.trainable().iter().map(|t| t.len()).collect();
    for (t, &len) in shapes.iter().enumerate() {
        for i in 0..len {
            let original = work.trainable()[t][i];
            let eval = |value: f64, work: &mut QNetwork| -> Result<(Batch, bool)> {
                work.trainable_mut()[t][i] = value;
                let (q, c) = work.forward_train_frozen(s1, s2, &masks)?;
                Ok((q, c.kink_signature() == base_kinks))
            };
            let (plus, same_plus) = eval(original + step, &mut work)?;
            let (minus, same_minus) = eval(original - step, &mut work)?;
            work.trainable_mut()[t][i] = original;
            if !(same_plus && same_minus) {
                report.skipped_kinks += 1;
                continue;
            }
            report.record(t, i, analytic.tensors[t][i], selected_loss_difference(&plus, &minus, actions, targets) / (2.0 * step));
        }
    }
    Ok(report)
}

/// Checks one layer in isolation: parameter gradients and the input gradient,
/// under the linear loss `Σ w ⊙ y` with a random projection `w`.
pub fn check_layer(spec: &LayerSpec, rows: usize, rng: &mut impl Rng) -> Result<GradCheckReport> {
    let width = match spec {
        LayerSpec::Dense { inputs, .. } => *inputs,
        LayerSpec::BatchNorm { width, .. } => *width,
        _ => 5,
    };
    let out_width = spec.output_width(width)?;
    let mut layer = Layer::init(spec, rng);
    if let Layer::BatchNorm(b) = &mut layer {
        // move away from the identity initialization so scale and shift matter
        b.gamma.iter_mut().for_each(|g| *g = rng.random_range(0.5..1.5));
        b.beta.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    }
    let x = Batch {
        rows,
        cols: width,
        data: (0..rows * width).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    let proj: Vec<f64> = (0..rows * out_width).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = |y: &Batch| y.data.iter().zip(&proj).map(|(a, b)| a * b).sum::<f64>();

    let keep = 1.0 - match spec {
        LayerSpec::Dropout { rate } => *rate,
        _ => 0.0,
    };
    let mask: Vec<f64> = (0..rows * width)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let mut fixed_mask = |_: usize, _: f64| mask.clone();

    let (_, cache) = layer.clone().forward_train(&x, &mut fixed_mask);
    let dy = Batch { rows, cols: out_width, data: proj.clone() };
    let mut grads = Vec::new();
    let dx = layer.backward(&cache, &dy, &mut grads)?;

    let mut report = GradCheckReport::new();
    let kinks = |x: &Batch| x.data.iter().map(|v| *v < 0.0).collect::<Vec<_>>();
    let base = kinks(&x);
    let is_leaky = matches!(spec, LayerSpec::LeakyRelu { .. });

    for (t, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let mut probe = |delta: f64| {
                let mut l = layer.clone();
                l.trainable_mut()[t][i] += delta;
                loss(&l.forward_train(&x, &mut fixed_mask).0)
            };
            let numeric = (probe(STEP) - probe(-STEP)) / (2.0 * STEP);
            report.record(t, i, g[i], numeric);
        }
    }
    // input gradient is reported as tensor index `grads.len()`
    for i in 0..x.data.len() {
        let mut probe = |delta: f64| {
            let mut xp = x.clone();
            xp.data[i] += delta;
            (loss(&layer.clone().forward_train(&xp, &mut fixed_mask).0), kinks(&xp))
        };
        let (plus, kp) = probe(STEP);
        let (minus, km) = probe(-STEP);
        if is_leaky && (kp != base || km != base) {
            report.skipped_kinks += 1;
            continue;
        }
        report.record(grads.len(), i, dx.data[i], (plus - minus) / (2.0 * STEP));
    }
    Ok(report)
}
