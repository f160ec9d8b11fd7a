use rand::Rng;

use super::adam::{Adam, AdamConfig};
use super::layers::{dropout_mask, Batch, Layer, LayerCache, LayerSpec};
use crate::{Error, Result};

/// Two input pipelines whose outputs are concatenated and fed to a shared head.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub input_a: usize,
    pub input_b: usize,
    pub pipeline_a: Vec<LayerSpec>,
    pub pipeline_b: Vec<LayerSpec>,
    pub head: Vec<LayerSpec>,
}

fn chain_width(input: usize, layers: &[LayerSpec]) -> Result<usize> {
    layers.iter().try_fold(input, |w, l| l.output_width(w))
}

/// Widths and hyperparameters of the two-pipeline network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkShape {
    pub width_a: usize,
    pub width_b: usize,
    pub head_width: usize,
    pub leaky_slope: f64,
    pub dropout: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for NetworkShape {
    fn default() -> Self {
        Self {
            width_a: 128,
            width_b: 64,
            head_width: 128,
            leaky_slope: 0.01,
            dropout: 0.2,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl Architecture {
    /// Default shape: dense → batch norm → leaky ReLU → dropout on each pipeline,
    /// then a two-layer head.
    pub fn two_pipeline(input_a: usize, input_b: usize, actions: usize) -> Self {
        Self::with_shape(input_a, input_b, actions, &NetworkShape::default())
    }

    pub fn with_shape(input_a: usize, input_b: usize, actions: usize, shape: &NetworkShape) -> Self {
        let pipe = |inputs: usize, width: usize| {
            vec![
                LayerSpec::Dense { inputs, outputs: width },
                LayerSpec::BatchNorm {
                    width,
                    eps: shape.bn_eps,
                    momentum: shape.bn_momentum,
                },
                LayerSpec::LeakyRelu { slope: shape.leaky_slope },
                LayerSpec::Dropout { rate: shape.dropout },
            ]
        };
        Self {
            input_a,
            input_b,
            pipeline_a: pipe(input_a, shape.width_a),
            pipeline_b: pipe(input_b, shape.width_b),
            head: vec![
                LayerSpec::Dense {
                    inputs: shape.width_a + shape.width_b,
                    outputs: shape.head_width,
                },
                LayerSpec::LeakyRelu { slope: shape.leaky_slope },
                LayerSpec::Dense {
                    inputs: shape.head_width,
                    outputs: actions,
                },
            ],
        }
    }

    /// Validates the width chain and returns the output width.
    pub fn output_width(&self) -> Result<usize> {
        if self.input_a == 0 || self.input_b == 0 {
            return Err(Error::InvalidArgument("inputs must be non-empty".into()));
        }
        let a = chain_width(self.input_a, &self.pipeline_a)?;
        let b = chain_width(self.input_b, &self.pipeline_b)?;
        let out = chain_width(a + b, &self.head)?;
        if out == 0 {
            return Err(Error::InvalidArgument("network has no outputs".into()));
        }
        Ok(out)
    }

    pub fn concat_width(&self) -> Result<usize> {
        Ok(chain_width(self.input_a, &self.pipeline_a)? + chain_width(self.input_b, &self.pipeline_b)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Train,
    Eval,
}

/// Activations kept by a train-mode pass, tied to the parameter version it ran on.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    rows: usize,
    split: usize,
    a: Vec<LayerCache>,
    b: Vec<LayerCache>,
    head: Vec<LayerCache>,
}

impl ForwardCache {
    /// Dropout masks in layer order, for replaying a pass exactly.
    pub fn dropout_masks(&self) -> Vec<Vec<f64>> {
        self.a
            .iter()
            .chain(&self.b)
            .chain(&self.head)
            .filter_map(|c| match c {
                LayerCache::Dropout { mask } => Some(mask.clone()),
                _ => None,
            })
            .collect()
    }

    /// Sign pattern of every leaky-ReLU input; a change means a kink was crossed.
    pub(crate) fn kink_signature(&self) -> Vec<bool> {
        self.a
            .iter()
            .chain(&self.b)
            .chain(&self.head)
            .filter_map(|c| match c {
                LayerCache::LeakyRelu { input } => Some(input.data.iter().map(|v| *v < 0.0)),
                _ => None,
            })
            .flatten()
            .collect()
    }
}

/// Gradients of every trainable tensor, in the network's canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn max_abs(&self) -> f64 {
        self.tensors.iter().flatten().fold(0.0, |m, g| m.max(g.abs()))
    }
}

thread_local! {
    static CONSTRUCTED: std::cell::Cell<usize> = const { std::cell::Cell::new(0) };
}

/// Networks built on the current thread so far (construction or loading).
pub fn networks_constructed() -> usize {
    CONSTRUCTED.with(|c| c.get())
}

fn count_construction() {
    CONSTRUCTED.with(|c| c.set(c.get() + 1));
}

/// The Q-network: layer parameters, batch-norm statistics and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    arch: Architecture,
    pub(crate) pipeline_a: Vec<Layer>,
    pub(crate) pipeline_b: Vec<Layer>,
    pub(crate) head: Vec<Layer>,
    pub(crate) optimizer: Adam,
    version: u64,
}

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(arch: Architecture, optimizer: AdamConfig, rng: &mut R) -> Result<Self> {
        arch.output_width()?;
        count_construction();
        let build = |specs: &[LayerSpec], rng: &mut R| specs.iter().map(|s| Layer::init(s, rng)).collect::<Vec<_>>();
        let pipeline_a = build(&arch.pipeline_a, rng);
        let pipeline_b = build(&arch.pipeline_b, rng);
        let head = build(&arch.head, rng);
        let mut net = Self {
            arch,
            pipeline_a,
            pipeline_b,
            head,
            optimizer: Adam::new(optimizer, &[]),
            version: 0,
        };
        let shapes: Vec<usize> = net.trainable().iter().map(|t| t.len()).collect();
        net.optimizer = Adam::new(optimizer, &shapes);
        Ok(net)
    }

    pub(crate) fn from_parts(arch: Architecture, pipeline_a: Vec<Layer>, pipeline_b: Vec<Layer>, head: Vec<Layer>, optimizer: Adam) -> Self {
        count_construction();
        Self {
            arch,
            pipeline_a,
            pipeline_b,
            head,
            optimizer,
            version: 0,
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn outputs(&self) -> usize {
        self.arch.output_width().expect("validated at construction")
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn optimizer(&self) -> &Adam {
        &self.optimizer
    }

    pub(crate) fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.pipeline_a.iter().chain(&self.pipeline_b).chain(&self.head)
    }

    pub(crate) fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.pipeline_a.iter_mut().chain(self.pipeline_b.iter_mut()).chain(self.head.iter_mut())
    }

    pub fn trainable(&self) -> Vec<&Vec<f64>> {
        self.layers().flat_map(|l| l.trainable()).collect()
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers_mut().flat_map(|l| l.trainable_mut()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    fn check_inputs(&self, s1: &Batch, s2: &Batch) -> Result<()> {
        if s1.cols != self.arch.input_a || s2.cols != self.arch.input_b || s1.rows != s2.rows {
            return Err(Error::Dimension(format!(
                "inputs {}x{} and {}x{} do not fit a network taking {} and {}",
                s1.rows, s1.cols, s2.rows, s2.cols, self.arch.input_a, self.arch.input_b
            )));
        }
        if s1.rows == 0 {
            return Err(Error::Dimension("empty batch".into()));
        }
        Ok(())
    }

    /// Deterministic inference with running batch-norm statistics and no dropout.
    pub fn forward_eval(&self, s1: &Batch, s2: &Batch) -> Result<Batch> {
        self.check_inputs(s1, s2)?;
        let run = |layers: &[Layer], x: &Batch| layers.iter().fold(x.clone(), |acc, l| l.forward_eval(&acc));
        let a = run(&self.pipeline_a, s1);
        let b = run(&self.pipeline_b, s2);
        Ok(run(&self.head, &Batch::hcat(&a, &b)))
    }

    /// Q-values of a single state.
    pub fn q_values(&self, s1: &[f64], s2: &[f64]) -> Result<Vec<f64>> {
        let a = Batch { rows: 1, cols: s1.len(), data: s1.to_vec() };
        let b = Batch { rows: 1, cols: s2.len(), data: s2.to_vec() };
        Ok(self.forward_eval(&a, &b)?.data)
    }

    /// Train-mode pass with fresh dropout masks; updates batch-norm running statistics.
    pub fn forward_train<R: Rng + ?Sized>(&mut self, s1: &Batch, s2: &Batch, rng: &mut R) -> Result<(Batch, ForwardCache)> {
        self.forward_impl(s1, s2, &mut |len, rate| dropout_mask(rng, len, rate))
    }

    /// Train-mode pass replaying the given dropout masks (layer order).
    pub fn forward_train_frozen(&mut self, s1: &Batch, s2: &Batch, masks: &[Vec<f64>]) -> Result<(Batch, ForwardCache)> {
        let mut it = masks.iter();
        let mut missing = false;
        let out = self.forward_impl(s1, s2, &mut |len, _| match it.next() {
            Some(m) if m.len() == len => m.clone(),
            _ => {
                missing = true;
                vec![1.0; len]
            }
        })?;
        if missing {
            return Err(Error::Dimension("frozen dropout masks do not match the network".into()));
        }
        Ok(out)
    }

    fn forward_impl(&mut self, s1: &Batch, s2: &Batch, mask: &mut dyn FnMut(usize, f64) -> Vec<f64>) -> Result<(Batch, ForwardCache)> {
        self.check_inputs(s1, s2)?;
        fn run(layers: &mut [Layer], x: &Batch, mask: &mut dyn FnMut(usize, f64) -> Vec<f64>) -> (Batch, Vec<LayerCache>) {
            let mut caches = Vec::with_capacity(layers.len());
            let mut acc = x.clone();
            for l in layers.iter_mut() {
                let (y, c) = l.forward_train(&acc, mask);
                caches.push(c);
                acc = y;
            }
            (acc, caches)
        }
        let (a, ca) = run(&mut self.pipeline_a, s1, mask);
        let (b, cb) = run(&mut self.pipeline_b, s2, mask);
        let split = a.cols;
        let (q, ch) = run(&mut self.head, &Batch::hcat(&a, &b), mask);
        let cache = ForwardCache {
            version: self.version,
            rows: s1.rows,
            split,
            a: ca,
            b: cb,
            head: ch,
        };
        Ok((q, cache))
    }

    /// Forward in the given mode, discarding the cache.
    pub fn forward<R: Rng + ?Sized>(&mut self, s1: &Batch, s2: &Batch, mode: ForwardMode, rng: &mut R) -> Result<Batch> {
        match mode {
            ForwardMode::Eval => self.forward_eval(s1, s2),
            ForwardMode::Train => Ok(self.forward_train(s1, s2, rng)?.0),
        }
    }

    /// Exact parameter gradients for an upstream gradient `dL/dq`.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Batch) -> Result<Gradients> {
        if cache.version != self.version {
            return Err(Error::StaleCache {
                cache: cache.version,
                current: self.version,
            });
        }
        if upstream.rows != cache.rows || upstream.cols != self.outputs() {
            return Err(Error::Dimension("upstream gradient shape does not match the cached pass".into()));
        }
        fn run(layers: &[Layer], caches: &[LayerCache], dy: &Batch) -> Result<(Batch, Vec<Vec<f64>>)> {
            let mut per_layer: Vec<Vec<Vec<f64>>> = Vec::with_capacity(layers.len());
            let mut g = dy.clone();
            for (l, c) in layers.iter().zip(caches).rev() {
                let mut local = Vec::new();
                g = l.backward(c, &g, &mut local)?;
                per_layer.push(local);
            }
            per_layer.reverse();
            Ok((g, per_layer.into_iter().flatten().collect()))
        }
        let (d_concat, g_head) = run(&self.head, &cache.head, upstream)?;
        let (da, db) = d_concat.hsplit(cache.split);
        let (_, g_a) = run(&self.pipeline_a, &cache.a, &da)?;
        let (_, g_b) = run(&self.pipeline_b, &cache.b, &db)?;
        let tensors = g_a.into_iter().chain(g_b).chain(g_head).collect();
        Ok(Gradients { tensors })
    }

    /// One adaptive-moment step. Rejects non-finite gradients without touching parameters.
    pub fn optimizer_step(&mut self, grads: &Gradients) -> Result<()> {
        let shapes: Vec<usize> = self.trainable().iter().map(|t| t.len()).collect();
        if grads.tensors.len() != shapes.len() || grads.tensors.iter().zip(&shapes).any(|(g, s)| g.len() != *s) {
            return Err(Error::Dimension("gradient shapes do not match the network".into()));
        }
        let mut opt = std::mem::replace(&mut self.optimizer, Adam::new(AdamConfig::default(), &[]));
        let result = opt.step(&mut self.trainable_mut(), &grads.tensors);
        self.optimizer = opt;
        result?;
        self.version += 1;
        Ok(())
    }
}
