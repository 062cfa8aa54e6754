//! Feed-forward ReLU classifier with analytic gradients.
//!
//! Weights of each dense layer are stored row-major with shape
//! `fan_in × fan_out`, so a batch `X` (rows = samples) maps to `X·W + b`.
//! Hidden layers use the rectifier; the output layer is linear and feeds a
//! softmax cross-entropy loss.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::taxonomy::{labels_at, Dataset, DomainLevel};

/// Format version carried by every parameter set.
pub const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Result<Self> {
        let arch = Self {
            input_dim,
            hidden_dims,
            output_dim,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Shape(format!("every dimension must be >= 1, got {self:?}")));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every dense layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in self.hidden_dims.iter().chain(core::iter::once(&self.output_dim)) {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub arch: Architecture,
    pub layers: Vec<Dense>,
    pub version: u32,
}

/// Per-layer gradient arrays, shaped like the parameters they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(params: &ClassifierParams) -> Self {
        Self {
            weights: params.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: params.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn check_shape(&self, params: &ClassifierParams) -> Result<()> {
        let ok = self.weights.len() == params.layers.len()
            && self.biases.len() == params.layers.len()
            && params
                .layers
                .iter()
                .zip(self.weights.iter().zip(&self.biases))
                .all(|(l, (w, b))| l.weights.len() == w.len() && l.bias.len() == b.len());
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("gradient set does not match parameter shapes".into()))
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &GradientSet, scale: f64) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += scale * b;
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> + '_ {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn len(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elementwise product with a mask of the same shape.
    pub fn mask_with(&mut self, mask: &GradientSet) {
        for (a, m) in self.values_mut().zip(mask.values()) {
            *a *= m;
        }
    }
}

impl ClassifierParams {
    pub fn values(&self) -> impl Iterator<Item = &f64> + '_ {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn num_values(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values().map(|v| v.abs()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// Checks layer shapes against the architecture.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let dims = self.arch.layer_dims();
        if dims.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "architecture has {} layers, parameters have {}",
                dims.len(),
                self.layers.len()
            )));
        }
        for (i, ((fi, fo), l)) in dims.iter().zip(&self.layers).enumerate() {
            if l.fan_in != *fi || l.fan_out != *fo || l.weights.len() != fi * fo || l.bias.len() != *fo {
                return Err(Error::Shape(format!("layer {i} does not match {fi}x{fo}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub init_scale: f64,
    /// Rescales each step's gradient to at most this L2 norm.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            init_scale: 1.0,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be a positive finite real"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::config("init_scale", "must be a non-negative finite real"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config("clip_norm", "must be a positive finite real"));
            }
        }
        Ok(())
    }
}

/// Weights uniform in `±init_scale/√fan_in`, biases zero.
pub fn init_classifier(arch: &Architecture, seed: u64, init_scale: f64) -> Result<ClassifierParams> {
    arch.validate()?;
    if !(init_scale >= 0.0 && init_scale.is_finite()) {
        return Err(Error::config("init_scale", "must be a non-negative finite real"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = arch
        .layer_dims()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let limit = init_scale / libm::sqrt(fan_in as f64);
            let weights = if limit > 0.0 {
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite symmetric range");
                (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect()
            } else {
                vec![0.0; fan_in * fan_out]
            };
            Dense {
                fan_in,
                fan_out,
                weights,
                bias: vec![0.0; fan_out],
            }
        })
        .collect();
    Ok(ClassifierParams {
        arch: arch.clone(),
        layers,
        version: PARAMS_VERSION,
    })
}

/// Activations recorded by [`forward`]. `post[0]` is the input batch;
/// `pre[l]` and `post[l + 1]` belong to dense layer `l`. The output layer's
/// post-activation equals its pre-activation (the logits).
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub pre: Vec<Matrix>,
    pub post: Vec<Matrix>,
}

fn affine(input: &Matrix, layer: &Dense) -> Matrix {
    let mut out = Matrix::zeros(input.rows(), layer.fan_out);
    for i in 0..input.rows() {
        let x = input.row(i);
        let o = out.row_mut(i);
        o.copy_from_slice(&layer.bias);
        for (p, &a) in x.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let w = &layer.weights[p * layer.fan_out..(p + 1) * layer.fan_out];
            for (oj, &wj) in o.iter_mut().zip(w) {
                *oj += a * wj;
            }
        }
    }
    out
}

fn relu(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for v in out.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

fn check_input(params: &ClassifierParams, inputs: &Matrix) -> Result<()> {
    if inputs.cols() != params.arch.input_dim {
        return Err(Error::Shape(format!(
            "input width {} but network expects {}",
            inputs.cols(),
            params.arch.input_dim
        )));
    }
    Ok(())
}

pub fn forward(params: &ClassifierParams, inputs: &Matrix) -> Result<(Matrix, ForwardCache)> {
    check_input(params, inputs)?;
    let n = params.layers.len();
    let mut pre = Vec::with_capacity(n);
    let mut post = Vec::with_capacity(n + 1);
    post.push(inputs.clone());
    for (l, layer) in params.layers.iter().enumerate() {
        let z = affine(&post[l], layer);
        let a = if l + 1 < n { relu(&z) } else { z.clone() };
        pre.push(z);
        post.push(a);
    }
    let logits = post[n].clone();
    Ok((logits, ForwardCache { pre, post }))
}

pub fn logits(params: &ClassifierParams, inputs: &Matrix) -> Result<Matrix> {
    check_input(params, inputs)?;
    let n = params.layers.len();
    let mut cur = inputs.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let z = affine(&cur, layer);
        cur = if l + 1 < n { relu(&z) } else { z };
    }
    Ok(cur)
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + libm::log(row.iter().map(|&v| libm::exp(v - m)).sum::<f64>())
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| libm::exp(v - m)).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        out.row_mut(i).copy_from_slice(&softmax(logits.row(i)));
    }
    out
}

/// `-log softmax(row)[label]`, computed stably.
pub fn cross_entropy(row: &[f64], label: usize) -> f64 {
    (log_sum_exp(row) - row[label]).max(0.0)
}

fn check_labels(params: &ClassifierParams, labels: &[usize], rows: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Shape(format!("{} labels for {rows} inputs", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= params.arch.output_dim) {
        return Err(Error::Domain(format!(
            "label {bad} outside output domain of size {}",
            params.arch.output_dim
        )));
    }
    Ok(())
}

/// Backpropagates per-sample logit gradients (`rows × output_dim`) through
/// the network. Returns parameter gradients and, when requested, the
/// gradient with respect to the inputs.
pub fn backward(params: &ClassifierParams, cache: &ForwardCache, dlogits: &Matrix, want_input: bool) -> (GradientSet, Option<Matrix>) {
    let mut grads = GradientSet::zeros_like(params);
    let mut delta = dlogits.clone();
    let n = params.layers.len();
    for l in (0..n).rev() {
        let layer = &params.layers[l];
        let input = &cache.post[l];
        let gw = &mut grads.weights[l];
        let gb = &mut grads.biases[l];
        for i in 0..delta.rows() {
            let d = delta.row(i);
            for (b, &dj) in gb.iter_mut().zip(d) {
                *b += dj;
            }
            for (p, &a) in input.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let row = &mut gw[p * layer.fan_out..(p + 1) * layer.fan_out];
                for (g, &dj) in row.iter_mut().zip(d) {
                    *g += a * dj;
                }
            }
        }
        if l == 0 && !want_input {
            break;
        }
        let mut prev = Matrix::zeros(delta.rows(), layer.fan_in);
        for i in 0..delta.rows() {
            let d = delta.row(i);
            let out = prev.row_mut(i);
            for (p, o) in out.iter_mut().enumerate() {
                let w = &layer.weights[p * layer.fan_out..(p + 1) * layer.fan_out];
                *o = w.iter().zip(d).map(|(a, b)| a * b).sum();
            }
        }
        if l > 0 {
            let z = &cache.pre[l - 1];
            for (v, &zv) in prev.as_mut_slice().iter_mut().zip(z.as_slice()) {
                if zv <= 0.0 {
                    *v = 0.0;
                }
            }
        }
        delta = prev;
    }
    let input_grad = if want_input { Some(delta) } else { None };
    (grads, input_grad)
}

/// Weighted sum of per-sample cross-entropy losses and its gradient.
/// Samples with weight exactly zero are skipped entirely.
pub fn weighted_loss_grad(
    params: &ClassifierParams,
    inputs: &Matrix,
    labels: &[usize],
    weights: &[f64],
) -> Result<(f64, GradientSet)> {
    check_labels(params, labels, inputs.rows())?;
    if weights.len() != inputs.rows() {
        return Err(Error::Shape(format!("{} weights for {} inputs", weights.len(), inputs.rows())));
    }
    let (logits, cache) = forward(params, inputs)?;
    let mut dlogits = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for i in 0..logits.rows() {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let row = logits.row(i);
        loss += w * cross_entropy(row, labels[i]);
        let p = softmax(row);
        let d = dlogits.row_mut(i);
        for (j, (dj, pj)) in d.iter_mut().zip(p).enumerate() {
            *dj = w * (pj - if j == labels[i] { 1.0 } else { 0.0 });
        }
    }
    let (grads, _) = backward(params, &cache, &dlogits, false);
    Ok((loss, grads))
}

/// Mean cross-entropy over the batch and its exact gradient.
pub fn loss_grad(params: &ClassifierParams, inputs: &Matrix, labels: &[usize]) -> Result<(f64, GradientSet)> {
    if inputs.rows() == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    let w = vec![1.0 / inputs.rows() as f64; inputs.rows()];
    weighted_loss_grad(params, inputs, labels, &w)
}

pub fn per_sample_losses(params: &ClassifierParams, inputs: &Matrix, labels: &[usize]) -> Result<Vec<f64>> {
    check_labels(params, labels, inputs.rows())?;
    let logits = logits(params, inputs)?;
    Ok((0..logits.rows()).map(|i| cross_entropy(logits.row(i), labels[i])).collect())
}

/// Gradient of each sample's own cross-entropy with respect to its input.
pub fn input_gradients(params: &ClassifierParams, inputs: &Matrix, labels: &[usize]) -> Result<Matrix> {
    check_labels(params, labels, inputs.rows())?;
    let (logits, cache) = forward(params, inputs)?;
    let mut dlogits = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let p = softmax(logits.row(i));
        for (j, (dj, pj)) in dlogits.row_mut(i).iter_mut().zip(p).enumerate() {
            *dj = pj - if j == labels[i] { 1.0 } else { 0.0 };
        }
    }
    let (_, dx) = backward(params, &cache, &dlogits, true);
    Ok(dx.expect("input gradient requested"))
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn predict(params: &ClassifierParams, inputs: &Matrix) -> Result<Vec<usize>> {
    let l = logits(params, inputs)?;
    Ok(l.iter_rows().map(argmax).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Descent,
    Ascent,
}

/// `θ − lr·g` for descent, `θ + lr·g` for ascent.
pub fn apply_step(params: &ClassifierParams, grads: &GradientSet, lr: f64, direction: Direction) -> Result<ClassifierParams> {
    let mut out = params.clone();
    apply_step_mut(&mut out, grads, lr, direction)?;
    Ok(out)
}

pub fn apply_step_mut(params: &mut ClassifierParams, grads: &GradientSet, lr: f64, direction: Direction) -> Result<()> {
    grads.check_shape(params)?;
    let signed = match direction {
        Direction::Descent => -lr,
        Direction::Ascent => lr,
    };
    for (p, g) in params.values_mut().zip(grads.values()) {
        *p += signed * g;
    }
    Ok(())
}

/// Post-activation output of the last hidden layer. A network without
/// hidden layers returns its raw input.
pub fn penultimate_features(params: &ClassifierParams, inputs: &Matrix) -> Result<Matrix> {
    check_input(params, inputs)?;
    let hidden = params.layers.len() - 1;
    let mut cur = inputs.clone();
    for layer in &params.layers[..hidden] {
        cur = relu(&affine(&cur, layer));
    }
    Ok(cur)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupAccuracy {
    pub percent: f64,
    /// Set when the index set was empty; `percent` is then 0.
    pub empty: bool,
}

/// Percentage of `index_set` whose argmax prediction equals the label at `level`.
pub fn group_accuracy(params: &ClassifierParams, dataset: &Dataset, index_set: &[usize], level: DomainLevel) -> Result<GroupAccuracy> {
    if index_set.is_empty() {
        return Ok(GroupAccuracy {
            percent: 0.0,
            empty: true,
        });
    }
    if let Some(&bad) = index_set.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::Range(format!("index {bad} outside dataset of {}", dataset.len())));
    }
    let preds = predict(params, &dataset.gather(index_set))?;
    let correct = index_set
        .iter()
        .zip(&preds)
        .filter(|(&i, &p)| labels_at(dataset.sample(i), level) == p)
        .count();
    Ok(GroupAccuracy {
        percent: 100.0 * correct as f64 / index_set.len() as f64,
        empty: false,
    })
}
