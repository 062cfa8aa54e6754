//! Unlearning engines: target-aware forgetting (class-wise and
//! instance-wise), the fine-tune, ascent, relabel, sparsity, boundary,
//! saliency and teacher-student baselines, plus pretraining and the
//! retrain-from-scratch reference.
//!
//! Engines only see an [`UnlearnView`]; evaluator-side recording hooks in
//! through an epoch observer called with the epoch index and the current
//! parameters (epoch 0 is the starting point, epoch `e + 1` follows the
//! `e`-th pass).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffnet::{
    apply_step_mut, backward, forward, init_classifier, input_gradients, loss_grad, per_sample_losses, predict,
    softmax, weighted_loss_grad, Architecture, ClassifierParams, Direction, GradientSet, TrainConfig,
};
use crate::dynamics::{unit_accuracies, DynamicsTrace};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::schedules::{con_indicator, estimate_beta, k_at, tau_mask, AnnealSchedule, ClassSignal, Granularity, TauMask, TauPolicy};
use crate::tasks::{UnlearnTask, UnlearnView};
use crate::taxonomy::{Dataset, DomainLevel, LabelTaxonomy};

/// Treatment of remaining samples that the frozen mask withholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UfMode {
    Ascend,
    Clean,
}

impl UfMode {
    pub fn name(self) -> &'static str {
        match self {
            UfMode::Ascend => "ascend",
            UfMode::Clean => "clean",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ascend" => Ok(UfMode::Ascend),
            "clean" => Ok(UfMode::Clean),
            other => Err(Error::config("uf_mode", format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Tarf,
    TarfInstance,
    Ft,
    Ga,
    Rl,
    L1,
    Bs,
    Salun,
    Scrub,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Tarf,
        Method::TarfInstance,
        Method::Ft,
        Method::Ga,
        Method::Rl,
        Method::L1,
        Method::Bs,
        Method::Salun,
        Method::Scrub,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Tarf => "tarf",
            Method::TarfInstance => "tarf-i",
            Method::Ft => "ft",
            Method::Ga => "ga",
            Method::Rl => "rl",
            Method::L1 => "l1",
            Method::Bs => "bs",
            Method::Salun => "salun",
            Method::Scrub => "scrub",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config("methods", format!("unknown method `{s}`")))
    }
}

impl core::fmt::Display for Method {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub train: TrainConfig,
    pub sched: AnnealSchedule,
    pub tau_policy: TauPolicy,
    pub uf_mode: UfMode,
    pub rl_seed: u64,
    pub l1_gamma: f64,
    pub bs_epsilon: f64,
    pub salun_gamma_quantile: f64,
    pub salun_alpha: f64,
    pub scrub_alpha: f64,
    pub scrub_gamma: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let train = TrainConfig {
            learning_rate: 0.01,
            epochs: 10,
            clip_norm: Some(5.0),
            ..TrainConfig::default()
        };
        Self {
            train,
            sched: AnnealSchedule {
                total: train.epochs,
                ..AnnealSchedule::default()
            },
            tau_policy: TauPolicy::default(),
            uf_mode: UfMode::Clean,
            rl_seed: 0,
            l1_gamma: 1e-4,
            bs_epsilon: 1.0,
            salun_gamma_quantile: 0.5,
            salun_alpha: 1.0,
            scrub_alpha: 1.0,
            scrub_gamma: 1.0,
        }
    }
}

fn non_negative(field: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, "must be a non-negative finite real"))
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.sched.validate()?;
        self.tau_policy.validate()?;
        non_negative("l1_gamma", self.l1_gamma)?;
        non_negative("bs_epsilon", self.bs_epsilon)?;
        non_negative("salun_alpha", self.salun_alpha)?;
        non_negative("scrub_alpha", self.scrub_alpha)?;
        non_negative("scrub_gamma", self.scrub_gamma)?;
        if !(0.0..=1.0).contains(&self.salun_gamma_quantile) {
            return Err(Error::config("salun_gamma_quantile", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Result of one engine call.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineRun {
    pub params: ClassifierParams,
    pub tau: Option<TauMask>,
    /// Data-level labels withheld from retaining by class-wise identification.
    pub selected_classes: Option<Vec<usize>>,
}

pub type Observer<'o> = dyn FnMut(usize, &ClassifierParams) -> Result<()> + 'o;

fn check_pretrained(view: &UnlearnView<'_>, params: &ClassifierParams) -> Result<()> {
    params.validate()?;
    if params.arch.output_dim != view.output_dim {
        return Err(Error::Shape(format!(
            "model emits {} labels, task's model level has {}",
            params.arch.output_dim, view.output_dim
        )));
    }
    if params.arch.input_dim != view.dataset.width() {
        return Err(Error::Shape(format!(
            "model reads {} features, dataset has {}",
            params.arch.input_dim,
            view.dataset.width()
        )));
    }
    Ok(())
}

/// Applies one update, clipping the gradient first when configured.
fn step(params: &mut ClassifierParams, g: &mut GradientSet, cfg: &TrainConfig, direction: Direction) -> Result<()> {
    if let Some(limit) = cfg.clip_norm {
        let norm = libm::sqrt(g.values().map(|v| v * v).sum::<f64>());
        if norm > limit {
            let s = limit / norm;
            g.values_mut().for_each(|v| *v *= s);
        }
    }
    apply_step_mut(params, g, cfg.learning_rate, direction)
}

/// One pass over the whole dataset in seeded mini-batches. A sample's
/// contribution to its batch is `base[i] · n / m` times its loss, where `m`
/// is the batch length, so a full epoch averages each role's term once.
/// Samples with zero weight take no part in the update.
fn weighted_epoch(
    params: &mut ClassifierParams,
    dataset: &Dataset,
    labels: &[usize],
    base: &[f64],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    mut extra: impl FnMut(&ClassifierParams, &mut GradientSet),
) -> Result<()> {
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for chunk in order.chunks(cfg.batch_size) {
        let scale = n as f64 / chunk.len() as f64;
        let w: Vec<f64> = chunk.iter().map(|&i| base[i] * scale).collect();
        let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        let (_, mut g) = weighted_loss_grad(params, &dataset.gather(chunk), &y, &w)?;
        extra(params, &mut g);
        step(params, &mut g, cfg, Direction::Descent)?;
    }
    Ok(())
}

/// Mean-loss mini-batch passes over `idx` only.
fn subset_epoch(
    params: &mut ClassifierParams,
    dataset: &Dataset,
    idx: &[usize],
    labels: &[usize],
    cfg: &TrainConfig,
    direction: Direction,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let mut order = idx.to_vec();
    order.shuffle(rng);
    for chunk in order.chunks(cfg.batch_size) {
        let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        let (_, mut g) = loss_grad(params, &dataset.gather(chunk), &y)?;
        step(params, &mut g, cfg, direction)?;
    }
    Ok(())
}

/// Trains a fresh network on `idx` with plain mini-batch descent.
pub fn train_on(
    dataset: &Dataset,
    idx: &[usize],
    labels: &[usize],
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<ClassifierParams> {
    cfg.validate()?;
    let mut params = init_classifier(arch, cfg.seed, cfg.init_scale)?;
    if idx.is_empty() {
        return Ok(params);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0000_0000_0001);
    for _ in 0..cfg.epochs {
        subset_epoch(&mut params, dataset, idx, labels, cfg, Direction::Descent, &mut rng)?;
    }
    Ok(params)
}

/// The original model θ*, trained on every sample at `model_level`.
pub fn pretrain(
    dataset: &Dataset,
    taxonomy: &LabelTaxonomy,
    model_level: DomainLevel,
    hidden: &[usize],
    cfg: &TrainConfig,
) -> Result<ClassifierParams> {
    let arch = Architecture::new(dataset.width(), hidden.to_vec(), taxonomy.count(model_level))?;
    let idx: Vec<usize> = (0..dataset.len()).collect();
    train_on(dataset, &idx, &dataset.labels(model_level), &arch, cfg)
}

/// Exact-unlearning reference: a fresh model trained on the retaining set.
pub fn retrain_reference(
    task: &UnlearnTask,
    dataset: &Dataset,
    taxonomy: &LabelTaxonomy,
    hidden: &[usize],
    cfg: &TrainConfig,
) -> Result<ClassifierParams> {
    let level = task.spec.model_level;
    let arch = Architecture::new(dataset.width(), hidden.to_vec(), taxonomy.count(level))?;
    train_on(dataset, &task.r_idx, &dataset.labels(level), &arch, cfg)
}

fn role_base(view: &UnlearnView<'_>, forget: f64, remain: f64) -> Vec<f64> {
    let mut base = vec![0.0; view.dataset.len()];
    let nf = view.f_idx.len().max(1) as f64;
    let nu = view.un_idx.len().max(1) as f64;
    for &i in view.f_idx {
        base[i] = forget / nf;
    }
    for &i in view.un_idx {
        base[i] = remain / nu;
    }
    base
}

fn shuffle_rng(cfg: &EngineConfig) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.train.seed)
}

/// Plain descent on the remaining data.
pub fn ft_run(
    view: &UnlearnView<'_>,
    pretrained: &ClassifierParams,
    cfg: &EngineConfig,
    observer: &mut Observer<'_>,
) -> Result<EngineRun> {
    l1_like(view, pretrained, cfg, 0.0, observer)
}

/// Fine-tuning with an added `γ·‖θ‖₁` penalty.
pub fn l1_sparse_run(
    view: &UnlearnView<'_>,
    pretrained: &ClassifierParams,
    cfg: &EngineConfig,
    observer: &mut Observer<'_>,
) -> Result<EngineRun> {
    l1_like(view, pretrained, cfg, cfg.l1_gamma, observer)
}

fn l1_like(
    view: &UnlearnView<'_>,
    pretrained: &ClassifierParams,
    cfg: &EngineConfig,
    gamma: f64,
    observer: &mut Observer<'_>,
) -> Result<EngineRun> {
    cfg.validate()?;
    non_negative("l1_gamma", gamma)?;
    check_pretrained(view, pretrained)?;
    let mut params = pretrained.clone();
    let base = role_base(view, 0.0, 1.0);
    let mut rng = shuffle_rng(cfg);
    observer(0, &params)?;
    for e in 0..cfg.train.epochs {
        weighted_epoch(&mut params, view.dataset, &view.model_labels, &base, &cfg.train, &mut rng, |p, g| {
            if gamma != 0.0 {
                for (gv, pv) in g.values_mut().zip(p.values()) {
                    if *pv != 0.0 {
                        *gv += gamma * pv.signum();
                    }
                }
            }
        })?;
        observer(e + 1, &params)?;
    }
    Ok(EngineRun {
        params,
        tau: None,
        selected_classes: None,
    })
}

/// Ascent on the forgetting data.
pub fn ga_run(
    view: &UnlearnView<'_>,
    pretrained: &ClassifierParams,
    cfg: &EngineConfig,
    observer: &mut Observer<'_>,
) -> Result<EngineRun> {
    cfg.validate()?;
    check_pretrained(view, pretrained)?;
    let mut params = pretrained.clone();
    let mut rng = shuffle_rng(cfg);
    observer(0, &params)?;
    for e in 0..cfg.train.epochs {
        subset_epoch(&mut params, view.dataset, view.f_idx, &view.model_labels, &cfg.train, Direction::Ascent, &mut rng)?;
        observer(e + 1, &params)?;
    }
    Ok(EngineRun {
        params,
        tau: None,
        selected_classes: None,
    })
}

/// Uniform labels over the output domain, never the true one, one per
/// forgetting sample. Entries outside `f_idx` keep their true label.
pub fn random_relabels(view: &UnlearnView<'_>, rl_seed: u64) -> Result<Vec<usize>> {
    if view.output_dim < 2 {
        return Err(Error::Method("relabelling needs an output domain with at least two labels".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rl_seed);
    let mut labels = view.model_labels.clone();
    for &i in view.f_idx {
        let y = view.model_labels[i];
        let draw = rng.random_range(0..view.output_dim - 1);
        labels[i] = if draw >= y { draw + 1 } else { draw };
    }
    Ok(labels)
}

/// Descent on the forgetting data under random wrong labels.
pub fn rl_run(
    view: &UnlearnView<'_>,
    pretrained: &ClassifierParams,
    cfg: &EngineConfig,
    observer: &mut Observer<'_>,
) -> Result<EngineRun> {
    cfg.validate()?;
    check_pretrained(view, pretrained)?;
    let labels = random_relabels(view, cfg.rl_seed)?;
    let mut params = pretrained.clone();
    let mut rng = shuffle_rng(cfg);
    observer(0, &params)?;
    for e in 0..cfg.train.epochs {
        subset_epoch(&mut params, view.dataset, view.f_idx, &labels, &cfg.train, Direction::Descent, &mut rng)?;
        observer(e + 1, &params)?;
    }
    Ok(EngineRun {
        params,
        tau: None,
        selected_classes: None,
    })
}

/// `x + ε·sign(∇ₓℓ)` for each row; zero gradient entries stay put.
pub fn boundary_perturb(params: &ClassifierParams, inputs: &Matrix, labels: &[usize], epsilon: f64) -> Result<Matrix> {
    let g = input_gradients(params, inputs, labels)?;
    let mut out = inputs.clone();
    for (x, d) in out.as_mut_slice().iter_mut().zip(g.as_slice()) {
        if *d > 0.0 {
            *x += epsilon;
        } else if *d < 0.0 {
            *x -= epsilon;
        }
    }
    Ok(out)
}

/// Labels predicted at the perturbed neighbours of the forgetting samples.
pub fn nearest_boundary_labels(view: &UnlearnView<'_>, params: &ClassifierParams, epsilon: f64) -> Result<Vec<usize>> {
    let mut labels = view.model_labels.clone();
    if view.f_idx.is_empty() {
        return Ok(labels);
    }
    let x = view.dataset.gather(view.f_idx);
    let y: Vec<usize> = view.f_idx.iter().map(|&i| view.model_labels[i]).collect();
    let shifted = boundary_perturb(params, &x, &y, epsilon)?;
    for (&i, p) in view.f_idx.iter().zip(predict(params, &shifted)?) {
        labels[i] = p;
    }
    Ok(labels)
}

/// Boundary shrink: descent on each forgetting sample toward the label of
/// its adversarial neighbour, refreshed once per epoch.
pub fn bs_run(
    view: &UnlearnView<'_>,
    pretrained: &ClassifierParams,
    cfg: &EngineConfig,
    observer: &mut Observer<'_>,
) -> Result<EngineRun> {
    cfg.validate()?;
    check_pretrained(view, pretrained)?;
    let mut params = pretrained.clone();
    let mut rng = shuffle_rng(cfg);
    observer(0, &params)?;
    for e in 0..cfg.train.epochs {
        let near = nearest_boundary_labels(view, &params, cfg.bs_epsilon)?;
        subset_epoch(&mut params, view.dataset, view.f_idx, &near, &cfg.train, Direction::Descent, &mut rng)?;
        observer(e + 1, &params)?;
    }
    Ok(EngineRun {
        params,
        tau: None,
        selected_classes: None,
    })
}

/// 0/1 mask keeping parameters whose forgetting-loss gradient magnitude
/// reaches the `quantile`-th order statistic.
pub fn saliency_mask(view: &UnlearnView<'_>, params: &ClassifierParams, quantile: f64) -> Result<GradientSet> {
    if !(0.0..=1.0).contains(&quantile) {
        return Err(Error::config("salun_gamma_quantile", "must lie in [0, 1]"));
    }
    let mut mask = GradientSet::zeros_like(params);
    if view.f_idx.is_empty() {
        mask.values_mut().for_each(|v| *v = 1.0);
        return Ok(mask);
    }
    let y: Vec<usize> = view.f_idx.iter().map(|&i| view.model_labels[i]).collect();
    let (_, g) = loss_grad(params, &view.dataset.gather(view.f_idx), &y)?;
    let mut mags: Vec<f64> = g.values().map(|v| v.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let total = mags.len();
    let keep = libm::ceil((1.0 - quantile) * total as f64) as usize;
    let gamma = if keep == 0 { f64::INFINITY } else { mags[total - keep] };
    for (m, v) in mask.values_mut().zip(g.values()) {
        *m = if v.abs() >= gamma { 1.0 } else { 0.0 };
    }
    Ok(mask)
}

/// Saliency-masked relabelling plus an `α`-weighted retain term.
pub fn salun_run(
    view: &UnlearnView<'_>,
    pretrained: &ClassifierParams,
    cfg: &EngineConfig,
    observer: &mut Observer<'_>,
) -> Result<EngineRun> {
    cfg.validate()?;
    check_pretrained(view, pretrained)?;
    let relabels = random_relabels(view, cfg.rl_seed)?;
    let mask = saliency_mask(view, pretrained, cfg.salun_gamma_quantile)?;
    let forget_base = role_base(view, 1.0, 0.0);
    let retain_base = role_base(view, 0.0, cfg.salun_alpha);
    let n = view.dataset.len();
    let mut params = pretrained.clone();
    let mut rng = shuffle_rng(cfg);
    observer(0, &params)?;
    for e in 0..cfg.train.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.train.batch_size) {
            let scale = n as f64 / chunk.len() as f64;
            let x = view.dataset.gather(chunk);
            let wf: Vec<f64> = chunk.iter().map(|&i| forget_base[i] * scale).collect();
            let wr: Vec<f64> = chunk.iter().map(|&i| retain_base[i] * scale).collect();
            let yf: Vec<usize> = chunk.iter().map(|&i| relabels[i]).collect();
            let yr: Vec<usize> = chunk.iter().map(|&i| view.model_labels[i]).collect();
            let (_, mut g) = weighted_loss_grad(&params, &x, &yf, &wf)?;
            g.mask_with(&mask);
            let (_, gr) = weighted_loss_grad(&params, &x, &yr, &wr)?;
            g.add_scaled(&gr, 1.0);
            step(&mut params, &mut g, &cfg.train, Direction::Descent)?;
        }
        observer(e + 1, &params)?;
    }
    Ok(EngineRun {
        params,
        tau: None,
        selected_classes: None,
    })
}

/// `KL(q‖p) = Σ q·(log q − log p)`, with `0·log 0 = 0`.
pub fn kl_divergence(q: &[f64], p: &[f64]) -> f64 {
    q.iter()
        .zip(p)
        .filter(|(&qi, _)| qi > 0.0)
        .map(|(&qi, &pi)| qi * (libm::log(qi) - libm::log(pi)))
        .sum()
}

/// Mean over the batch of `α·KL(teacher‖student) + γ·CE(y)`; returns the
/// value and its parameter gradient.
pub fn distill_loss_grad(
    student: &ClassifierParams,
    teacher: &ClassifierParams,
    inputs: &Matrix,
    labels: &[usize],
    alpha: f64,
    gamma: f64,
) -> Result<(f64, GradientSet)> {
    if inputs.rows() == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    let t_logits = crate::diffnet::logits(teacher, inputs)?;
    let (s_logits, cache) = forward(student, inputs)?;
    let m = inputs.rows() as f64;
    let mut dlogits = Matrix::zeros(s_logits.rows(), s_logits.cols());
    let mut loss = 0.0;
    for i in 0..inputs.rows() {
        let q = softmax(t_logits.row(i));
        let p = softmax(s_logits.row(i));
        loss += alpha * kl_divergence(&q, &p);
        if gamma != 0.0 {
            loss += gamma * crate::diffnet::cross_entropy(s_logits.row(i), labels[i]);
        }
        for (j, d) in dlogits.row_mut(i).iter_mut().enumerate() {
            let onehot = if j == labels[i] { 1.0 } else { 0.0 };
            *d = (alpha * (p[j] - q[j]) + gamma * (p[j] - onehot)) / m;
        }
    }
    let (g, _) = backward(student, &cache, &dlogits, false);
    Ok((loss / m, g))
}

/// Teacher-student scrubbing: per epoch one descent pass over the remaining
/// data on distillation plus cross-entropy, then one ascent pass over the
/// forgetting data on distillation alone.
pub fn scrub_run(
    view: &UnlearnView<'_>,
    pretrained: &ClassifierParams,
    cfg: &EngineConfig,
    observer: &mut Observer<'_>,
) -> Result<EngineRun> {
    cfg.validate()?;
    check_pretrained(view, pretrained)?;
    let teacher = pretrained.clone();
    let mut params = pretrained.clone();
    let mut rng = shuffle_rng(cfg);
    observer(0, &params)?;
    for e in 0..cfg.train.epochs {
        let mut order = view.un_idx.to_vec();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.train.batch_size) {
            let y: Vec<usize> = chunk.iter().map(|&i| view.model_labels[i]).collect();
            let (_, mut g) = distill_loss_grad(&params, &teacher, &view.dataset.gather(chunk), &y, cfg.scrub_alpha, cfg.scrub_gamma)?;
            step(&mut params, &mut g, &cfg.train, Direction::Descent)?;
        }
        let mut order = view.f_idx.to_vec();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.train.batch_size) {
            let y: Vec<usize> = chunk.iter().map(|&i| view.model_labels[i]).collect();
            let (_, mut g) = distill_loss_grad(&params, &teacher, &view.dataset.gather(chunk), &y, 1.0, 0.0)?;
            step(&mut params, &mut g, &cfg.train, Direction::Ascent)?;
        }
        observer(e + 1, &params)?;
    }
    Ok(EngineRun {
        params,
        tau: None,
        selected_classes: None,
    })
}

/// Identification units of the remaining data: for class-wise masks, the
/// distinct data-level labels present; for instance-wise masks, each sample.
struct Units {
    /// Unit of each entry of `un_idx`.
    of_sample: Vec<usize>,
    /// Data-level label of each class-wise unit.
    labels: Vec<usize>,
    count: usize,
}

fn build_units(view: &UnlearnView<'_>, granularity: Granularity) -> Units {
    match granularity {
        Granularity::Classwise => {
            let mut slot = vec![usize::MAX; view.data_label_count];
            let mut labels = Vec::new();
            let mut of_sample = Vec::with_capacity(view.un_idx.len());
            for &i in view.un_idx {
                let l = view.data_labels[i];
                if slot[l] == usize::MAX {
                    slot[l] = labels.len();
                    labels.push(l);
                }
                of_sample.push(slot[l]);
            }
            // order units by label id so ties resolve toward lower ids
            let mut order: Vec<usize> = (0..labels.len()).collect();
            order.sort_by_key(|&u| labels[u]);
            let mut rank = vec![0; labels.len()];
            for (r, &u) in order.iter().enumerate() {
                rank[u] = r;
            }
            let sorted_labels = order.iter().map(|&u| labels[u]).collect::<Vec<_>>();
            Units {
                of_sample: of_sample.into_iter().map(|u| rank[u]).collect(),
                count: sorted_labels.len(),
                labels: sorted_labels,
            }
        }
        Granularity::Instancewise => Units {
            of_sample: (0..view.un_idx.len()).collect(),
            labels: Vec::new(),
            count: view.un_idx.len(),
        },
    }
}

/// Class-mean loss of every unit over `view.un_idx`.
fn unit_losses(view: &UnlearnView<'_>, units: &Units, params: &ClassifierParams) -> Result<Vec<f64>> {
    let mut sum = vec![0.0; units.count];
    let mut count = vec![0usize; units.count];
    if !view.un_idx.is_empty() {
        let y: Vec<usize> = view.un_idx.iter().map(|&i| view.model_labels[i]).collect();
        let losses = per_sample_losses(params, &view.dataset.gather(view.un_idx), &y)?;
        for (pos, l) in losses.into_iter().enumerate() {
            sum[units.of_sample[pos]] += l;
            count[units.of_sample[pos]] += 1;
        }
    }
    Ok(sum.iter().zip(&count).map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect())
}

/// Per-unit change between two parameter sets. Classes use the configured
/// class signal; samples use the absolute loss change.
fn unit_changes(
    view: &UnlearnView<'_>,
    units: &Units,
    policy: &TauPolicy,
    before: &ClassifierParams,
    after: &ClassifierParams,
) -> Result<Vec<f64>> {
    match policy.granularity {
        Granularity::Classwise if policy.class_signal == ClassSignal::Loss => {
            let a = unit_losses(view, units, before)?;
            let b = unit_losses(view, units, after)?;
            a.iter().zip(&b).map(|(&p, &q)| con_indicator(p, q)).collect()
        }
        Granularity::Classwise => {
            let a = unit_accuracies(before, view.dataset, view.un_idx, &units.of_sample, units.count, &view.model_labels)?;
            let b = unit_accuracies(after, view.dataset, view.un_idx, &units.of_sample, units.count, &view.model_labels)?;
            Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).collect())
        }
        Granularity::Instancewise => {
            if view.un_idx.is_empty() {
                return Ok(Vec::new());
            }
            let x = view.dataset.gather(view.un_idx);
            let y: Vec<usize> = view.un_idx.iter().map(|&i| view.model_labels[i]).collect();
            let l0 = per_sample_losses(before, &x, &y)?;
            let l1 = per_sample_losses(after, &x, &y)?;
            l0.iter().zip(&l1).map(|(&p, &q)| con_indicator(p, q)).collect()
        }
    }
}

fn tarf_core(
    view: &UnlearnView<'_>,
    pretrained: &ClassifierParams,
    cfg: &EngineConfig,
    granularity: Granularity,
    stop_at: usize,
    observer: &mut Observer<'_>,
) -> Result<EngineRun> {
    cfg.validate()?;
    if cfg.sched.total != cfg.train.epochs {
        return Err(Error::config(
            "sched.T",
            format!("schedule length {} differs from {} training epochs", cfg.sched.total, cfg.train.epochs),
        ));
    }
    check_pretrained(view, pretrained)?;
    let policy = TauPolicy {
        granularity,
        declared_count: view.declared_unidentified_count,
        ..cfg.tau_policy
    };
    let units = build_units(view, granularity);
    let n = view.dataset.len();
    let nf = view.f_idx.len().max(1) as f64;
    let nu = view.un_idx.len().max(1) as f64;
    let t1 = cfg.sched.t1;

    let mut params = pretrained.clone();
    let mut rng = shuffle_rng(cfg);
    let mut tau: Option<TauMask> = None;
    let mut selected = None;
    observer(0, &params)?;
    for t in 0..cfg.train.epochs.min(stop_at) {
        if t == t1 && tau.is_none() {
            let changes = unit_changes(view, &units, &policy, pretrained, &params)?;
            let mask = if changes.is_empty() {
                tau_mask(&changes, f64::INFINITY, t, t1)
            } else {
                let beta = estimate_beta(&changes, &policy)?;
                tau_mask(&changes, beta, t, t1)
            };
            if granularity == Granularity::Classwise {
                selected = Some(
                    mask.values()
                        .iter()
                        .zip(&units.labels)
                        .filter(|(&v, _)| v == 0)
                        .map(|(_, &l)| l)
                        .collect::<Vec<_>>(),
                );
            }
            tau = Some(mask);
        }
        let k = k_at(&cfg.sched, t)?;
        let mut base = vec![0.0; n];
        for &i in view.f_idx {
            base[i] = -k / nf;
        }
        if let Some(mask) = &tau {
            for (pos, &i) in view.un_idx.iter().enumerate() {
                let v = mask.at(units.of_sample[pos], t);
                base[i] = if v == 1 {
                    1.0 / nu
                } else {
                    match cfg.uf_mode {
                        UfMode::Clean => 0.0,
                        UfMode::Ascend => -k / nf,
                    }
                };
            }
        }
        weighted_epoch(&mut params, view.dataset, &view.model_labels, &base, &cfg.train, &mut rng, |_, _| {})?;
        observer(t + 1, &params)?;
    }
    Ok(EngineRun {
        params,
        tau,
        selected_classes: selected,
    })
}

/// Target-aware forgetting with class-wise identification of hidden
/// target data.
pub fn tarf_run(
    view: &UnlearnView<'_>,
    pretrained: &ClassifierParams,
    cfg: &EngineConfig,
    observer: &mut Observer<'_>,
) -> Result<EngineRun> {
    tarf_core(view, pretrained, cfg, Granularity::Classwise, usize::MAX, observer)
}

/// Target-aware forgetting with a per-sample retaining mask.
pub fn tarf_instance_run(
    view: &UnlearnView<'_>,
    pretrained: &ClassifierParams,
    cfg: &EngineConfig,
    observer: &mut Observer<'_>,
) -> Result<EngineRun> {
    tarf_core(view, pretrained, cfg, Granularity::Instancewise, usize::MAX, observer)
}

/// Parameters after the active-forgetting prelude, i.e. at epoch `t1`,
/// before any retaining update.
pub fn tarf_phase_one(view: &UnlearnView<'_>, pretrained: &ClassifierParams, cfg: &EngineConfig) -> Result<ClassifierParams> {
    let mut ignore = |_: usize, _: &ClassifierParams| Ok(());
    let granularity = cfg.tau_policy.granularity;
    Ok(tarf_core(view, pretrained, cfg, granularity, cfg.sched.t1, &mut ignore)?.params)
}

pub fn run_engine(
    method: Method,
    view: &UnlearnView<'_>,
    pretrained: &ClassifierParams,
    cfg: &EngineConfig,
    observer: &mut Observer<'_>,
) -> Result<EngineRun> {
    match method {
        Method::Tarf => tarf_run(view, pretrained, cfg, observer),
        Method::TarfInstance => tarf_instance_run(view, pretrained, cfg, observer),
        Method::Ft => ft_run(view, pretrained, cfg, observer),
        Method::Ga => ga_run(view, pretrained, cfg, observer),
        Method::Rl => rl_run(view, pretrained, cfg, observer),
        Method::L1 => l1_sparse_run(view, pretrained, cfg, observer),
        Method::Bs => bs_run(view, pretrained, cfg, observer),
        Method::Salun => salun_run(view, pretrained, cfg, observer),
        Method::Scrub => scrub_run(view, pretrained, cfg, observer),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlearnOutcome {
    pub method: Method,
    pub params: ClassifierParams,
    pub trace: DynamicsTrace,
    /// Wall-clock seconds of the engine itself, trace recording excluded.
    /// Zero when no clock was supplied.
    pub rte_seconds: f64,
    pub tau: Option<TauMask>,
    pub selected_classes: Option<Vec<usize>>,
}

/// Runs `method` on the engine-visible view of `task`, recording the
/// evaluator trace each epoch. `clock` returns seconds from any fixed origin.
pub fn run_unlearning(
    method: Method,
    task: &UnlearnTask,
    dataset: &Dataset,
    taxonomy: &LabelTaxonomy,
    pretrained: &ClassifierParams,
    cfg: &EngineConfig,
    mut clock: Option<&mut dyn FnMut() -> f64>,
) -> Result<UnlearnOutcome> {
    let view = task.view(dataset, taxonomy);
    let mut trace = DynamicsTrace::new(task, taxonomy);
    let mut recording = 0.0;
    let start = clock.as_mut().map_or(0.0, |c| c());
    let run = {
        let mut observe = |epoch: usize, p: &ClassifierParams| -> Result<()> {
            let t0 = clock.as_mut().map_or(0.0, |c| c());
            trace.record_epoch(p, dataset, epoch)?;
            recording += clock.as_mut().map_or(0.0, |c| c()) - t0;
            Ok(())
        };
        run_engine(method, &view, pretrained, cfg, &mut observe)?
    };
    let elapsed = clock.as_mut().map_or(0.0, |c| c()) - start;
    Ok(UnlearnOutcome {
        method,
        params: run.params,
        trace,
        rte_seconds: (elapsed - recording).max(0.0),
        tau: run.tau,
        selected_classes: run.selected_classes,
    })
}
