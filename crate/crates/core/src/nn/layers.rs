use rand::Rng;

use crate::{Error, Result};

/// Row-major `rows x cols` block of activations, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Batch {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged batch rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Side-by-side concatenation of two batches with equal row counts.
    pub fn hcat(a: &Batch, b: &Batch) -> Batch {
        let mut out = Batch::zeros(a.rows, a.cols + b.cols);
        for r in 0..a.rows {
            let row = out.row_mut(r);
            row[..a.cols].copy_from_slice(a.row(r));
            row[a.cols..].copy_from_slice(b.row(r));
        }
        out
    }

    /// Inverse of [`Batch::hcat`].
    pub fn hsplit(&self, left: usize) -> (Batch, Batch) {
        let mut a = Batch::zeros(self.rows, left);
        let mut b = Batch::zeros(self.rows, self.cols - left);
        for r in 0..self.rows {
            a.row_mut(r).copy_from_slice(&self.row(r)[..left]);
            b.row_mut(r).copy_from_slice(&self.row(r)[left..]);
        }
        (a, b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Dense { inputs: usize, outputs: usize },
    BatchNorm { width: usize, eps: f64, momentum: f64 },
    LeakyRelu { slope: f64 },
    Dropout { rate: f64 },
}

impl LayerSpec {
    /// Output width given the input width, or an error if the layer cannot accept it.
    pub fn output_width(&self, input: usize) -> Result<usize> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                if inputs != input {
                    return Err(Error::Dimension(format!("dense layer expects {inputs} inputs, got {input}")));
                }
                if outputs == 0 {
                    return Err(Error::InvalidArgument("dense layer needs positive width".into()));
                }
                Ok(outputs)
            }
            LayerSpec::BatchNorm { width, eps, momentum } => {
                if width != input {
                    return Err(Error::Dimension(format!("batch norm width {width} vs input {input}")));
                }
                if !(eps > 0.0) || !(0.0..=1.0).contains(&momentum) {
                    return Err(Error::InvalidArgument("batch norm eps must be > 0 and momentum in [0, 1]".into()));
                }
                Ok(input)
            }
            LayerSpec::LeakyRelu { slope } => {
                if !(slope > 0.0) {
                    return Err(Error::InvalidArgument("leaky slope must be positive".into()));
                }
                Ok(input)
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::InvalidArgument("dropout rate must be in [0, 1)".into()));
                }
                Ok(input)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs x inputs`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub width: usize,
    pub eps: f64,
    pub momentum: f64,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    BatchNorm(BatchNorm),
    LeakyRelu { slope: f64 },
    Dropout { rate: f64 },
}

/// What a train-mode forward pass keeps for the backward pass.
#[derive(Debug, Clone)]
pub(crate) enum LayerCache {
    Dense { input: Batch },
    BatchNorm { xhat: Batch, inv_std: Vec<f64>, batch_stats: bool },
    LeakyRelu { input: Batch },
    Dropout { mask: Vec<f64> },
}

impl Layer {
    /// Dense weights uniform in `±sqrt(6 / fan_in)`, zero biases; unit scale, zero shift.
    pub fn init<R: Rng + ?Sized>(spec: &LayerSpec, rng: &mut R) -> Self {
        match *spec {
            LayerSpec::Dense { inputs, outputs } => {
                let bound = (6.0 / inputs as f64).sqrt();
                Layer::Dense(Dense {
                    inputs,
                    outputs,
                    weight: (0..inputs * outputs).map(|_| rng.random_range(-bound..bound)).collect(),
                    bias: vec![0.0; outputs],
                })
            }
            LayerSpec::BatchNorm { width, eps, momentum } => Layer::BatchNorm(BatchNorm {
                width,
                eps,
                momentum,
                gamma: vec![1.0; width],
                beta: vec![0.0; width],
                running_mean: vec![0.0; width],
                running_var: vec![1.0; width],
            }),
            LayerSpec::LeakyRelu { slope } => Layer::LeakyRelu { slope },
            LayerSpec::Dropout { rate } => Layer::Dropout { rate },
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(d) => LayerSpec::Dense { inputs: d.inputs, outputs: d.outputs },
            Layer::BatchNorm(b) => LayerSpec::BatchNorm { width: b.width, eps: b.eps, momentum: b.momentum },
            Layer::LeakyRelu { slope } => LayerSpec::LeakyRelu { slope: *slope },
            Layer::Dropout { rate } => LayerSpec::Dropout { rate: *rate },
        }
    }

    /// Trainable tensors in canonical order.
    pub fn trainable(&self) -> Vec<&Vec<f64>> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            _ => Vec::new(),
        }
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            _ => Vec::new(),
        }
    }

    /// Every stored tensor (trainable plus running statistics) in file order.
    pub fn stored(&self) -> Vec<&Vec<f64>> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta, &b.running_mean, &b.running_var],
            _ => Vec::new(),
        }
    }

    pub fn stored_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta, &mut b.running_mean, &mut b.running_var],
            _ => Vec::new(),
        }
    }

    pub fn forward_eval(&self, x: &Batch) -> Batch {
        match self {
            Layer::Dense(d) => dense_forward(d, x),
            Layer::BatchNorm(b) => {
                let inv_std: Vec<f64> = b.running_var.iter().map(|v| 1.0 / (v + b.eps).sqrt()).collect();
                let xhat = normalize(x, &b.running_mean, &inv_std);
                scale_shift(&xhat, &b.gamma, &b.beta)
            }
            Layer::LeakyRelu { slope } => leaky(x, *slope),
            Layer::Dropout { .. } => x.clone(),
        }
    }

    /// Train-mode forward. `mask` supplies the dropout keep-mask (already scaled).
    pub(crate) fn forward_train(
        &mut self,
        x: &Batch,
        mask: &mut dyn FnMut(usize, f64) -> Vec<f64>,
    ) -> (Batch, LayerCache) {
        match self {
            Layer::Dense(d) => (dense_forward(d, x), LayerCache::Dense { input: x.clone() }),
            Layer::BatchNorm(b) => {
                if x.rows < 2 {
                    // a single sample has no batch variance
                    let inv_std: Vec<f64> = b.running_var.iter().map(|v| 1.0 / (v + b.eps).sqrt()).collect();
                    let xhat = normalize(x, &b.running_mean, &inv_std);
                    let y = scale_shift(&xhat, &b.gamma, &b.beta);
                    return (y, LayerCache::BatchNorm { xhat, inv_std, batch_stats: false });
                }
                let n = x.rows as f64;
                let mut mean = vec![0.0; x.cols];
                for r in 0..x.rows {
                    for (m, v) in mean.iter_mut().zip(x.row(r)) {
                        *m += v / n;
                    }
                }
                let mut var = vec![0.0; x.cols];
                for r in 0..x.rows {
                    for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                        *s += (v - m).powi(2) / n;
                    }
                }
                for j in 0..x.cols {
                    let unbiased = var[j] * n / (n - 1.0);
                    b.running_mean[j] = (1.0 - b.momentum) * b.running_mean[j] + b.momentum * mean[j];
                    b.running_var[j] = (1.0 - b.momentum) * b.running_var[j] + b.momentum * unbiased;
                }
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + b.eps).sqrt()).collect();
                let xhat = normalize(x, &mean, &inv_std);
                let y = scale_shift(&xhat, &b.gamma, &b.beta);
                (y, LayerCache::BatchNorm { xhat, inv_std, batch_stats: true })
            }
            Layer::LeakyRelu { slope } => (leaky(x, *slope), LayerCache::LeakyRelu { input: x.clone() }),
            Layer::Dropout { rate } => {
                let m = mask(x.data.len(), *rate);
                let mut y = x.clone();
                y.data.iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                (y, LayerCache::Dropout { mask: m })
            }
        }
    }

    /// Returns the input gradient and pushes parameter gradients (canonical order) to `grads`.
    pub(crate) fn backward(&self, cache: &LayerCache, dy: &Batch, grads: &mut Vec<Vec<f64>>) -> Result<Batch> {
        match (self, cache) {
            (Layer::Dense(d), LayerCache::Dense { input }) => {
                let (i, o) = (d.inputs as isize, d.outputs as isize);
                // dW = dy^T x, db = column sums of dy, dx = dy W
                let mut dw = vec![0.0; d.weight.len()];
                gemm(d.outputs, dy.rows, d.inputs, &dy.data, (1, o), &input.data, (i, 1), &mut dw, false);
                let mut db = vec![0.0; d.outputs];
                for r in 0..dy.rows {
                    db.iter_mut().zip(dy.row(r)).for_each(|(b, g)| *b += g);
                }
                let mut dx = Batch::zeros(dy.rows, d.inputs);
                gemm(dy.rows, d.outputs, d.inputs, &dy.data, (o, 1), &d.weight, (i, 1), &mut dx.data, false);
                grads.push(dw);
                grads.push(db);
                Ok(dx)
            }
            (Layer::BatchNorm(b), LayerCache::BatchNorm { xhat, inv_std, batch_stats }) => {
                let cols = b.width;
                let mut dgamma = vec![0.0; cols];
                let mut dbeta = vec![0.0; cols];
                for r in 0..dy.rows {
                    for j in 0..cols {
                        dgamma[j] += dy.row(r)[j] * xhat.row(r)[j];
                        dbeta[j] += dy.row(r)[j];
                    }
                }
                let mut dx = Batch::zeros(dy.rows, cols);
                let n = dy.rows as f64;
                for r in 0..dy.rows {
                    for j in 0..cols {
                        let g = dy.row(r)[j] * b.gamma[j];
                        dx.row_mut(r)[j] = if *batch_stats {
                            // d/dx of (x - mean) * inv_std through the batch statistics
                            inv_std[j] / n * (n * g - b.gamma[j] * dbeta[j] - xhat.row(r)[j] * b.gamma[j] * dgamma[j])
                        } else {
                            g * inv_std[j]
                        };
                    }
                }
                grads.push(dgamma);
                grads.push(dbeta);
                Ok(dx)
            }
            (Layer::LeakyRelu { slope }, LayerCache::LeakyRelu { input }) => {
                let mut dx = dy.clone();
                dx.data
                    .iter_mut()
                    .zip(&input.data)
                    .for_each(|(g, x)| if *x < 0.0 { *g *= slope });
                Ok(dx)
            }
            (Layer::Dropout { .. }, LayerCache::Dropout { mask }) => {
                let mut dx = dy.clone();
                dx.data.iter_mut().zip(mask).for_each(|(g, k)| *g *= k);
                Ok(dx)
            }
            _ => Err(Error::Dimension("layer and cache kinds disagree".into())),
        }
    }
}

/// `C (m x n) = A (m x k) · B (k x n)` with explicit row/column strides, accumulating when `accumulate`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_strides: (isize, isize), b: &[f64], b_strides: (isize, isize), c: &mut [f64], accumulate: bool) {
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: every stride pair addresses within the slice lengths asserted below.
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `y = x W^T + b`, with `W` stored outputs x inputs row-major.
fn dense_forward(d: &Dense, x: &Batch) -> Batch {
    let mut y = Batch::zeros(x.rows, d.outputs);
    for r in 0..x.rows {
        y.row_mut(r).copy_from_slice(&d.bias);
    }
    let i = d.inputs as isize;
    gemm(x.rows, d.inputs, d.outputs, &x.data, (i, 1), &d.weight, (1, i), &mut y.data, true);
    y
}

fn normalize(x: &Batch, mean: &[f64], inv_std: &[f64]) -> Batch {
    let mut out = x.clone();
    for r in 0..x.rows {
        for (j, v) in out.row_mut(r).iter_mut().enumerate() {
            *v = (*v - mean[j]) * inv_std[j];
        }
    }
    out
}

fn scale_shift(xhat: &Batch, gamma: &[f64], beta: &[f64]) -> Batch {
    let mut out = xhat.clone();
    for r in 0..xhat.rows {
        for (j, v) in out.row_mut(r).iter_mut().enumerate() {
            *v = *v * gamma[j] + beta[j];
        }
    }
    out
}

fn leaky(x: &Batch, slope: f64) -> Batch {
    let mut y = x.clone();
    y.data.iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v *= slope
        }
    });
    y
}

/// Inverted-dropout keep-mask: 0 with probability `rate`, else `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(rng: &mut R, len: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}
