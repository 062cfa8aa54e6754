//! Per-epoch forgetting traces and penultimate-feature geometry probes.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::diffnet::{argmax, cross_entropy, logits, penultimate_features, per_sample_losses, ClassifierParams};
use crate::error::{Error, Result};
use crate::tasks::UnlearnTask;
use crate::taxonomy::{labels_at, Dataset, DomainLevel, LabelTaxonomy};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupSnapshot {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSnapshot {
    pub epoch: usize,
    /// Parallel to [`DynamicsTrace::group_names`].
    pub groups: Vec<GroupSnapshot>,
    /// Accuracy at the model level of the training samples carrying each
    /// data-level label. Labels without samples read 0.
    pub class_accuracy: Vec<f64>,
}

/// Evaluator-side record of how a run moves the f, uf and r groups.
/// Groups that are empty for the task are left out.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsTrace {
    group_names: Vec<String>,
    group_idx: Vec<Vec<usize>>,
    model_level: DomainLevel,
    data_level: DomainLevel,
    data_label_count: usize,
    snapshots: Vec<EpochSnapshot>,
}

impl DynamicsTrace {
    pub fn new(task: &UnlearnTask, taxonomy: &LabelTaxonomy) -> Self {
        let mut group_names = Vec::new();
        let mut group_idx = Vec::new();
        for (name, idx) in [("f", &task.f_idx), ("uf", &task.uf_idx), ("r", &task.r_idx)] {
            if !idx.is_empty() {
                group_names.push(String::from(name));
                group_idx.push(idx.clone());
            }
        }
        Self {
            group_names,
            group_idx,
            model_level: task.spec.model_level,
            data_level: task.spec.data_level,
            data_label_count: taxonomy.count(task.spec.data_level),
            snapshots: Vec::new(),
        }
    }

    pub fn group_names(&self) -> &[String] {
        &self.group_names
    }

    pub fn snapshots(&self) -> &[EpochSnapshot] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn snapshot(&self, epoch: usize) -> Option<&EpochSnapshot> {
        self.snapshots.iter().find(|s| s.epoch == epoch)
    }

    pub fn group(&self, name: &str) -> Option<usize> {
        self.group_names.iter().position(|g| g == name)
    }

    /// Appends the snapshot of `params` at `epoch`.
    pub fn record_epoch(&mut self, params: &ClassifierParams, dataset: &Dataset, epoch: usize) -> Result<()> {
        if let Some(last) = self.snapshots.last() {
            if epoch <= last.epoch {
                return Err(Error::Range(format!("epoch {epoch} recorded after epoch {}", last.epoch)));
            }
        }
        let out = logits(params, &dataset.all_features())?;
        let mut losses = vec![0.0; dataset.len()];
        let mut correct = vec![false; dataset.len()];
        for (i, s) in dataset.samples().iter().enumerate() {
            let y = labels_at(s, self.model_level);
            losses[i] = cross_entropy(out.row(i), y);
            correct[i] = argmax(out.row(i)) == y;
        }
        let groups = self
            .group_idx
            .iter()
            .map(|idx| {
                let n = idx.len() as f64;
                GroupSnapshot {
                    loss: idx.iter().map(|&i| losses[i]).sum::<f64>() / n,
                    accuracy: 100.0 * idx.iter().filter(|&&i| correct[i]).count() as f64 / n,
                }
            })
            .collect();
        let mut hits = vec![0usize; self.data_label_count];
        let mut totals = vec![0usize; self.data_label_count];
        for (i, s) in dataset.samples().iter().enumerate() {
            let c = labels_at(s, self.data_level);
            totals[c] += 1;
            hits[c] += usize::from(correct[i]);
        }
        let class_accuracy = hits
            .iter()
            .zip(&totals)
            .map(|(&h, &t)| if t == 0 { 0.0 } else { 100.0 * h as f64 / t as f64 })
            .collect();
        self.snapshots.push(EpochSnapshot {
            epoch,
            groups,
            class_accuracy,
        });
        Ok(())
    }
}

/// Per data-level label: accuracy at `t_ref` minus accuracy at `t_now`.
pub fn class_accuracy_drop(trace: &DynamicsTrace, t_ref: usize, t_now: usize) -> Result<Vec<f64>> {
    let a = trace
        .snapshot(t_ref)
        .ok_or_else(|| Error::Range(format!("epoch {t_ref} not recorded")))?;
    let b = trace
        .snapshot(t_now)
        .ok_or_else(|| Error::Range(format!("epoch {t_now} not recorded")))?;
    Ok(a.class_accuracy.iter().zip(&b.class_accuracy).map(|(x, y)| x - y).collect())
}

/// Ids of the `count` largest drops, lower id first on ties, returned sorted.
pub fn select_target_classes(drops: &[f64], count: usize) -> Result<Vec<usize>> {
    if count > drops.len() {
        return Err(Error::Range(format!("cannot select {count} of {} classes", drops.len())));
    }
    let mut order: Vec<usize> = (0..drops.len()).collect();
    order.sort_by(|&a, &b| drops[b].total_cmp(&drops[a]).then(a.cmp(&b)));
    let mut chosen = order[..count].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Model-level accuracy in percent of the samples in `idx` grouped by a
/// unit id; `unit_of[i]` names the unit of `idx[i]`. Units without members
/// read 0.
pub fn unit_accuracies(
    params: &ClassifierParams,
    dataset: &Dataset,
    idx: &[usize],
    unit_of: &[usize],
    units: usize,
    model_labels: &[usize],
) -> Result<Vec<f64>> {
    if idx.len() != unit_of.len() {
        return Err(Error::Shape(format!("{} indices with {} unit ids", idx.len(), unit_of.len())));
    }
    let mut hits = vec![0usize; units];
    let mut totals = vec![0usize; units];
    if !idx.is_empty() {
        let out = logits(params, &dataset.gather(idx))?;
        for (r, (&i, &u)) in idx.iter().zip(unit_of).enumerate() {
            totals[u] += 1;
            hits[u] += usize::from(argmax(out.row(r)) == model_labels[i]);
        }
    }
    Ok(hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| if t == 0 { 0.0 } else { 100.0 * h as f64 / t as f64 })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub group: String,
    pub center: Vec<f64>,
    pub distances: Vec<f64>,
}

impl FeatureStats {
    pub fn measure(params: &ClassifierParams, dataset: &Dataset, idx: &[usize], group: &str) -> Result<Self> {
        let center = feature_center(params, dataset, idx)?;
        let distances = feature_distances(params, dataset, idx, &center)?;
        Ok(Self {
            group: group.into(),
            center,
            distances,
        })
    }

    pub fn mean_distance(&self) -> f64 {
        self.distances.iter().sum::<f64>() / self.distances.len() as f64
    }
}

/// Mean penultimate feature of the samples in `idx`.
pub fn feature_center(params: &ClassifierParams, dataset: &Dataset, idx: &[usize]) -> Result<Vec<f64>> {
    if idx.is_empty() {
        return Err(Error::Data("feature center of an empty set".into()));
    }
    let h = penultimate_features(params, &dataset.gather(idx))?;
    let mut center = vec![0.0; h.cols()];
    for row in h.iter_rows() {
        for (c, v) in center.iter_mut().zip(row) {
            *c += v;
        }
    }
    let n = idx.len() as f64;
    center.iter_mut().for_each(|c| *c /= n);
    Ok(center)
}

/// Euclidean distance of each sample's penultimate feature to `center`.
pub fn feature_distances(params: &ClassifierParams, dataset: &Dataset, idx: &[usize], center: &[f64]) -> Result<Vec<f64>> {
    let h = penultimate_features(params, &dataset.gather(idx))?;
    if idx.is_empty() {
        return Ok(Vec::new());
    }
    if h.cols() != center.len() {
        return Err(Error::Shape(format!("feature width {} vs center width {}", h.cols(), center.len())));
    }
    Ok(h.iter_rows()
        .map(|row| libm::sqrt(row.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()))
        .collect())
}

/// `|ℓ_before − ℓ_after|` per sample, labels at `level`.
pub fn loss_changes(
    before: &ClassifierParams,
    after: &ClassifierParams,
    dataset: &Dataset,
    idx: &[usize],
    level: DomainLevel,
) -> Result<Vec<f64>> {
    if idx.is_empty() {
        return Ok(Vec::new());
    }
    let x = dataset.gather(idx);
    let labels: Vec<usize> = idx.iter().map(|&i| labels_at(dataset.sample(i), level)).collect();
    let a = per_sample_losses(before, &x, &labels)?;
    let b = per_sample_losses(after, &x, &labels)?;
    Ok(a.iter().zip(&b).map(|(p, q)| (p - q).abs()).collect())
}

/// Mean loss change of a near group against a far group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GravityProbe {
    pub near: f64,
    pub far: f64,
    /// Number of data-level labels pooled into the far group.
    pub far_labels: usize,
}

impl GravityProbe {
    pub fn holds(&self) -> bool {
        self.far_labels > 0 && self.far < self.near
    }
}

/// Mean of the per-label mean loss changes of `labels` at `data_level`.
fn label_mean_change(
    before: &ClassifierParams,
    after: &ClassifierParams,
    dataset: &Dataset,
    labels: &[usize],
    data_level: DomainLevel,
    model_level: DomainLevel,
) -> Result<f64> {
    let mut per = Vec::with_capacity(labels.len());
    for &l in labels {
        let idx = dataset.indices_with(data_level, &[l]);
        if !idx.is_empty() {
            per.push(mean(&loss_changes(before, after, dataset, &idx, model_level)?));
        }
    }
    Ok(mean(&per))
}

/// Weak-gravity probe: the forgetting set's own mean loss change against
/// that of labels whose samples sit, on average, farther from the
/// forgetting feature center than any forgetting sample does.
pub fn weak_gravity_probe(
    before: &ClassifierParams,
    after: &ClassifierParams,
    dataset: &Dataset,
    f_idx: &[usize],
    data_level: DomainLevel,
    model_level: DomainLevel,
) -> Result<GravityProbe> {
    let center = feature_center(before, dataset, f_idx)?;
    let radius = feature_distances(before, dataset, f_idx, &center)?
        .into_iter()
        .fold(0.0, f64::max);
    let mut own: Vec<usize> = f_idx.iter().map(|&i| labels_at(dataset.sample(i), data_level)).collect();
    own.sort_unstable();
    own.dedup();
    let labels = dataset.labels(data_level);
    let count = labels.iter().max().map_or(0, |m| m + 1);
    let mut far = Vec::new();
    for l in (0..count).filter(|l| !own.contains(l)) {
        let idx: Vec<usize> = (0..dataset.len()).filter(|&i| labels[i] == l).collect();
        if !idx.is_empty() && mean(&feature_distances(before, dataset, &idx, &center)?) > radius {
            far.push(l);
        }
    }
    Ok(GravityProbe {
        near: mean(&loss_changes(before, after, dataset, f_idx, model_level)?),
        far: label_mean_change(before, after, dataset, &far, data_level, model_level)?,
        far_labels: far.len(),
    })
}

/// Strong-gravity probe: classes sharing the forgetting class's superclass
/// against classes of every other superclass, by mean loss change.
pub fn strong_gravity_probe(
    before: &ClassifierParams,
    after: &ClassifierParams,
    dataset: &Dataset,
    taxonomy: &LabelTaxonomy,
    forget_class: usize,
    model_level: DomainLevel,
) -> Result<GravityProbe> {
    let c2s = taxonomy.class_to_super();
    let home = *c2s
        .get(forget_class)
        .ok_or_else(|| Error::Range(format!("class {forget_class} out of range")))?;
    let siblings: Vec<usize> = (0..c2s.len()).filter(|&c| c != forget_class && c2s[c] == home).collect();
    let others: Vec<usize> = (0..c2s.len()).filter(|&c| c2s[c] != home).collect();
    if siblings.is_empty() {
        return Err(Error::Data(format!("class {forget_class} has no siblings")));
    }
    Ok(GravityProbe {
        near: label_mean_change(before, after, dataset, &siblings, DomainLevel::Class, model_level)?,
        far: label_mean_change(before, after, dataset, &others, DomainLevel::Class, model_level)?,
        far_labels: others.len(),
    })
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}
