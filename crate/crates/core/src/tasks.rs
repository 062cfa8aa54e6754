//! Scenario classification over (data, model, target) label levels and
//! construction of the dataset partitions for one unlearning request.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::taxonomy::{labels_at, Dataset, DomainLevel, LabelTaxonomy};

/// The triple of label levels (L_D, L_M, L_T) of an unlearning request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScenarioSpec {
    pub data_level: DomainLevel,
    pub model_level: DomainLevel,
    pub target_level: DomainLevel,
}

impl ScenarioSpec {
    pub const fn new(data_level: DomainLevel, model_level: DomainLevel, target_level: DomainLevel) -> Self {
        Self {
            data_level,
            model_level,
            target_level,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    AllMatched,
    TargetMismatch,
    ModelMismatch,
    DataMismatch,
    SimilarToAllMatched,
    /// Row number of the three-layer scenario table.
    ExtendedDifferent(u8),
    Impractical,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::AllMatched => "all-matched",
            ScenarioKind::TargetMismatch => "target-mismatch",
            ScenarioKind::ModelMismatch => "model-mismatch",
            ScenarioKind::DataMismatch => "data-mismatch",
            ScenarioKind::SimilarToAllMatched => "similar-to-all-matched",
            ScenarioKind::ExtendedDifferent(_) => "extended-different",
            ScenarioKind::Impractical => "impractical",
        }
    }
}

impl core::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ScenarioKind::ExtendedDifferent(no) => write!(f, "extended-different-{no}"),
            other => f.write_str(other.name()),
        }
    }
}

use DomainLevel::{Class as C, Subset as S, Superclass as P};

/// The 27 (L_D, L_M, L_T) triples in the row order of the three-layer table.
pub const THREE_LAYER_ROWS: [ScenarioSpec; 27] = [
    ScenarioSpec::new(S, S, S),
    ScenarioSpec::new(S, S, C),
    ScenarioSpec::new(S, C, S),
    ScenarioSpec::new(S, C, C),
    ScenarioSpec::new(S, S, P),
    ScenarioSpec::new(S, P, S),
    ScenarioSpec::new(S, P, P),
    ScenarioSpec::new(S, C, P),
    ScenarioSpec::new(S, P, C),
    ScenarioSpec::new(C, C, C),
    ScenarioSpec::new(C, C, P),
    ScenarioSpec::new(C, P, C),
    ScenarioSpec::new(C, P, P),
    ScenarioSpec::new(C, S, S),
    ScenarioSpec::new(C, S, C),
    ScenarioSpec::new(C, S, P),
    ScenarioSpec::new(C, C, S),
    ScenarioSpec::new(C, P, S),
    ScenarioSpec::new(P, P, P),
    ScenarioSpec::new(P, C, C),
    ScenarioSpec::new(P, C, P),
    ScenarioSpec::new(P, P, C),
    ScenarioSpec::new(P, S, S),
    ScenarioSpec::new(P, S, C),
    ScenarioSpec::new(P, S, P),
    ScenarioSpec::new(P, C, S),
    ScenarioSpec::new(P, P, S),
];

/// 1-based row of `spec` in the three-layer table.
pub fn three_layer_row(spec: ScenarioSpec) -> u8 {
    let pos = THREE_LAYER_ROWS
        .iter()
        .position(|r| *r == spec)
        .expect("table covers all 27 triples");
    (pos + 1) as u8
}

/// Classifies a level triple.
///
/// * `L_D ≻ L_T` is impractical: the request names more data than the concept.
/// * `L_D = L_T` with a finer model output behaves like all-matched.
/// * Triples spanning all three levels (subset and superclass both present)
///   are the extended "different" rows, except the similar-to-all-matched
///   case above.
/// * Otherwise the four main relations apply.
pub fn classify_scenario(spec: ScenarioSpec) -> ScenarioKind {
    let ScenarioSpec {
        data_level: d,
        model_level: m,
        target_level: t,
    } = spec;
    if d > t {
        return ScenarioKind::Impractical;
    }
    if d == t && m < d {
        return ScenarioKind::SimilarToAllMatched;
    }
    let lo = d.min(m).min(t);
    let hi = d.max(m).max(t);
    if lo == S && hi == P {
        return ScenarioKind::ExtendedDifferent(three_layer_row(spec));
    }
    match (d == t, m == d, m == t) {
        (true, true, _) => ScenarioKind::AllMatched,
        (true, false, _) => ScenarioKind::ModelMismatch,
        (false, true, _) => ScenarioKind::TargetMismatch,
        (false, false, true) => ScenarioKind::DataMismatch,
        (false, false, false) => unreachable!("d < t with m outside [d, t] spans all three levels"),
    }
}

/// A validated unlearning request and its dataset partitions. All index
/// lists are sorted and refer to the training dataset the task was built on.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlearnTask {
    pub scenario: ScenarioKind,
    pub spec: ScenarioSpec,
    pub forgetting_labels: Vec<usize>,
    pub target_labels: Vec<usize>,
    /// Data-level labels inside the target concept that are absent from the
    /// forgetting selection.
    pub declared_unidentified_count: usize,
    pub f_idx: Vec<usize>,
    pub t_idx: Vec<usize>,
    pub uf_idx: Vec<usize>,
    pub r_idx: Vec<usize>,
    pub un_idx: Vec<usize>,
}

fn sorted_unique(labels: &[usize]) -> Vec<usize> {
    let mut v = labels.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

pub fn build_task(
    dataset: &Dataset,
    taxonomy: &LabelTaxonomy,
    spec: ScenarioSpec,
    forgetting_labels: &[usize],
    target_labels: &[usize],
) -> Result<UnlearnTask> {
    let scenario = classify_scenario(spec);
    if scenario == ScenarioKind::Impractical {
        return Err(Error::Scenario(format!(
            "({}, {}, {}) is impractical: forgetting data is coarser than the target concept",
            spec.data_level, spec.model_level, spec.target_level
        )));
    }
    let forgetting = sorted_unique(forgetting_labels);
    let target = sorted_unique(target_labels);
    if forgetting.is_empty() {
        return Err(Error::Data("no forgetting labels given".into()));
    }
    if target.is_empty() {
        return Err(Error::Data("no target labels given".into()));
    }
    let d_count = taxonomy.count(spec.data_level);
    if let Some(&bad) = forgetting.iter().find(|&&l| l >= d_count) {
        return Err(Error::Domain(format!("forgetting label {bad} not in the {} level", spec.data_level)));
    }
    let t_count = taxonomy.count(spec.target_level);
    if let Some(&bad) = target.iter().find(|&&l| l >= t_count) {
        return Err(Error::Domain(format!("target label {bad} not in the {} level", spec.target_level)));
    }
    for &l in &forgetting {
        let parent = taxonomy
            .lift(l, spec.data_level, spec.target_level)
            .expect("data level is not coarser than target level");
        if !target.contains(&parent) {
            return Err(Error::Containment(format!(
                "forgetting {} {l} lies outside the target concept",
                spec.data_level
            )));
        }
    }
    if spec.data_level == spec.target_level && forgetting != target {
        return Err(Error::Containment(
            "at equal data and target levels the target concept must equal the forgetting selection".into(),
        ));
    }

    let declared_unidentified_count = (0..d_count)
        .filter(|l| !forgetting.contains(l))
        .filter(|&l| {
            taxonomy
                .lift(l, spec.data_level, spec.target_level)
                .is_some_and(|p| target.contains(&p))
        })
        .count();

    let mut f_idx = Vec::new();
    let mut t_idx = Vec::new();
    let mut uf_idx = Vec::new();
    let mut r_idx = Vec::new();
    let mut un_idx = Vec::new();
    for (i, s) in dataset.samples().iter().enumerate() {
        let in_t = target.contains(&labels_at(s, spec.target_level));
        let in_f = forgetting.contains(&labels_at(s, spec.data_level));
        if in_f {
            f_idx.push(i);
        } else {
            un_idx.push(i);
        }
        if in_t {
            t_idx.push(i);
            if !in_f {
                uf_idx.push(i);
            }
        } else {
            r_idx.push(i);
        }
    }
    Ok(UnlearnTask {
        scenario,
        spec,
        forgetting_labels: forgetting,
        target_labels: target,
        declared_unidentified_count,
        f_idx,
        t_idx,
        uf_idx,
        r_idx,
        un_idx,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    IndexOutOfRange,
    ForgetNotInTarget,
    UnidentifiedNotTargetMinusForget,
    RemainingNotAllMinusForget,
    RetainNotAllMinusTarget,
    RetainUnionUnidentifiedNotRemaining,
    RetainMeetsUnidentified,
}

impl Violation {
    pub fn identity(self) -> &'static str {
        match self {
            Violation::IndexOutOfRange => "index outside dataset",
            Violation::ForgetNotInTarget => "f ⊄ t",
            Violation::UnidentifiedNotTargetMinusForget => "uf ≠ t \\ f",
            Violation::RemainingNotAllMinusForget => "un ≠ all \\ f",
            Violation::RetainNotAllMinusTarget => "r ≠ all \\ t",
            Violation::RetainUnionUnidentifiedNotRemaining => "r ∪ uf ≠ un",
            Violation::RetainMeetsUnidentified => "r ∩ uf ≠ ∅",
        }
    }
}

impl core::fmt::Display for Violation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.identity())
    }
}

fn membership(n: usize, idx: &[usize]) -> Option<Vec<bool>> {
    let mut m = alloc::vec![false; n];
    for &i in idx {
        *m.get_mut(i)? = true;
    }
    Some(m)
}

/// Checks the partition identities in order and reports the first one broken.
pub fn validate_partition(task: &UnlearnTask, dataset: &Dataset) -> core::result::Result<(), Violation> {
    let n = dataset.len();
    let sets = [&task.f_idx, &task.t_idx, &task.uf_idx, &task.r_idx, &task.un_idx];
    let mut m = Vec::with_capacity(5);
    for s in sets {
        m.push(membership(n, s).ok_or(Violation::IndexOutOfRange)?);
    }
    let (f, t, uf, r, un) = (&m[0], &m[1], &m[2], &m[3], &m[4]);
    let all = |pred: &dyn Fn(usize) -> bool| (0..n).all(pred);
    if !all(&|i| !f[i] || t[i]) {
        return Err(Violation::ForgetNotInTarget);
    }
    if !all(&|i| uf[i] == (t[i] && !f[i])) {
        return Err(Violation::UnidentifiedNotTargetMinusForget);
    }
    if !all(&|i| un[i] == !f[i]) {
        return Err(Violation::RemainingNotAllMinusForget);
    }
    if !all(&|i| r[i] == !t[i]) {
        return Err(Violation::RetainNotAllMinusTarget);
    }
    if !all(&|i| (r[i] || uf[i]) == un[i]) {
        return Err(Violation::RetainUnionUnidentifiedNotRemaining);
    }
    if !all(&|i| !(r[i] && uf[i])) {
        return Err(Violation::RetainMeetsUnidentified);
    }
    Ok(())
}

/// What an unlearning engine is allowed to see: sample features, labels at
/// the model and data levels, the identified forgetting indices, the
/// remaining indices and the declared number of unidentified data-level
/// labels. The target concept and the uf/r split stay with the evaluator.
#[derive(Debug, Clone)]
pub struct UnlearnView<'a> {
    pub dataset: &'a Dataset,
    pub model_level: DomainLevel,
    pub data_level: DomainLevel,
    pub model_labels: Vec<usize>,
    pub data_labels: Vec<usize>,
    pub data_label_count: usize,
    pub output_dim: usize,
    pub f_idx: &'a [usize],
    pub un_idx: &'a [usize],
    pub declared_unidentified_count: usize,
}

impl UnlearnTask {
    pub fn view<'a>(&'a self, dataset: &'a Dataset, taxonomy: &LabelTaxonomy) -> UnlearnView<'a> {
        UnlearnView {
            dataset,
            model_level: self.spec.model_level,
            data_level: self.spec.data_level,
            model_labels: dataset.labels(self.spec.model_level),
            data_labels: dataset.labels(self.spec.data_level),
            data_label_count: taxonomy.count(self.spec.data_level),
            output_dim: taxonomy.count(self.spec.model_level),
            f_idx: &self.f_idx,
            un_idx: &self.un_idx,
            declared_unidentified_count: self.declared_unidentified_count,
        }
    }

    /// Whether a test sample belongs to the target concept.
    pub fn in_target(&self, sample: &crate::taxonomy::Sample) -> bool {
        self.target_labels.contains(&labels_at(sample, self.spec.target_level))
    }
}
