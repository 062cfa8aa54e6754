//! Evaluation suite: accuracy on the target concept, the retaining set and
//! held-out data, a confidence-threshold membership attacker, and the
//! averaged gap to the retrained reference.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::diffnet::{group_accuracy, logits, softmax, ClassifierParams};
use crate::error::{Error, Result};
use crate::tasks::UnlearnTask;
use crate::taxonomy::{labels_at, Dataset, DomainLevel};

/// Per-sample score the membership attacker thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ConfidenceSignal {
    /// Largest softmax probability.
    MaxSoftmax,
    /// Softmax probability of the sample's own label.
    #[default]
    TrueLabel,
}

impl ConfidenceSignal {
    pub fn name(self) -> &'static str {
        match self {
            ConfidenceSignal::MaxSoftmax => "max-softmax",
            ConfidenceSignal::TrueLabel => "true-label",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "max-softmax" => Ok(ConfidenceSignal::MaxSoftmax),
            "true-label" => Ok(ConfidenceSignal::TrueLabel),
            other => Err(Error::config("eval.mia_signal", format!("unknown signal `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiaAttacker {
    pub threshold: f64,
    pub fit_balanced_accuracy: f64,
}

impl MiaAttacker {
    pub fn is_member(&self, confidence: f64) -> bool {
        confidence >= self.threshold
    }
}

/// Balanced accuracy of "member iff confidence ≥ threshold" from counts.
#[inline]
fn balanced(tp: usize, members: usize, tn: usize, nonmembers: usize) -> f64 {
    (tp as f64 / members as f64 + tn as f64 / nonmembers as f64) / 2.0
}

/// Threshold attacker with the best balanced accuracy over the smallest
/// observed confidence and every midpoint between adjacent distinct
/// confidences. Ties go to the lowest threshold.
pub fn fit_mia_attacker(members: &[f64], nonmembers: &[f64]) -> Result<MiaAttacker> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::Data("membership attacker needs members and non-members".into()));
    }
    if members.iter().chain(nonmembers).any(|c| !c.is_finite()) {
        return Err(Error::Numeric("non-finite confidence".into()));
    }
    // (confidence, is_member), ascending
    let mut pts: Vec<(f64, bool)> = members
        .iter()
        .map(|&c| (c, true))
        .chain(nonmembers.iter().map(|&c| (c, false)))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nm, nn) = (members.len(), nonmembers.len());

    // threshold at the minimum: everything is a member
    let mut best = MiaAttacker {
        threshold: pts[0].0,
        fit_balanced_accuracy: balanced(nm, nm, 0, nn),
    };
    let mut below_members = 0;
    let mut below_nonmembers = 0;
    let mut i = 0;
    while i < pts.len() {
        let v = pts[i].0;
        while i < pts.len() && pts[i].0 == v {
            if pts[i].1 {
                below_members += 1;
            } else {
                below_nonmembers += 1;
            }
            i += 1;
        }
        if i == pts.len() {
            break;
        }
        let threshold = (v + pts[i].0) / 2.0;
        let ba = balanced(nm - below_members, nm, below_nonmembers, nn);
        if ba > best.fit_balanced_accuracy {
            best = MiaAttacker {
                threshold,
                fit_balanced_accuracy: ba,
            };
        }
    }
    Ok(best)
}

/// Confidence of each sample in `idx`, labels read at `level`.
pub fn confidences(
    params: &ClassifierParams,
    dataset: &Dataset,
    idx: &[usize],
    level: DomainLevel,
    signal: ConfidenceSignal,
) -> Result<Vec<f64>> {
    if idx.is_empty() {
        return Ok(Vec::new());
    }
    let out = logits(params, &dataset.gather(idx))?;
    Ok(idx
        .iter()
        .enumerate()
        .map(|(r, &i)| {
            let p = softmax(out.row(r));
            match signal {
                ConfidenceSignal::MaxSoftmax => p.iter().copied().fold(0.0, f64::max),
                ConfidenceSignal::TrueLabel => p[labels_at(dataset.sample(i), level)],
            }
        })
        .collect())
}

/// Percentage of target confidences the attacker calls non-members.
pub fn mia_score(attacker: &MiaAttacker, target_confidences: &[f64]) -> Result<f64> {
    if target_confidences.is_empty() {
        return Err(Error::Data("no target samples to score".into()));
    }
    let out = target_confidences.iter().filter(|&&c| !attacker.is_member(c)).count();
    Ok(100.0 * out as f64 / target_confidences.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub method: String,
    /// Identifies the task; reports are comparable only when these match.
    pub task: String,
    pub scenario: String,
    pub ua: f64,
    pub ra: f64,
    /// Held-out accuracy excluding target-concept samples.
    pub ta: f64,
    /// Held-out accuracy over every held-out sample.
    pub ta_all: f64,
    pub mia: f64,
    pub rte_seconds: f64,
}

/// Stable one-line descriptor of a task's levels and label selections.
pub fn task_descriptor(task: &UnlearnTask) -> String {
    let join = |v: &[usize]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",");
    format!(
        "{}/{}/{} f=[{}] t=[{}]",
        task.spec.data_level,
        task.spec.model_level,
        task.spec.target_level,
        join(&task.forgetting_labels),
        join(&task.target_labels)
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalConfig {
    pub signal: ConfidenceSignal,
}

/// UA on the target concept, RA on the retaining set, TA on held-out data
/// outside the target concept, and the membership score of the target
/// concept against an attacker fitted on retaining members and held-out
/// non-members.
pub fn compute_metrics(
    params: &ClassifierParams,
    task: &UnlearnTask,
    dataset: &Dataset,
    test: &Dataset,
    method: &str,
    rte_seconds: f64,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    if task.r_idx.is_empty() {
        return Err(Error::Data("task has an empty retaining set".into()));
    }
    let level = task.spec.model_level;
    let ua = group_accuracy(params, dataset, &task.t_idx, level)?.percent;
    let ra = group_accuracy(params, dataset, &task.r_idx, level)?.percent;
    let test_all: Vec<usize> = (0..test.len()).collect();
    let test_keep: Vec<usize> = test_all
        .iter()
        .copied()
        .filter(|&i| !task.in_target(test.sample(i)))
        .collect();
    let ta = group_accuracy(params, test, &test_keep, level)?.percent;
    let ta_all = group_accuracy(params, test, &test_all, level)?.percent;
    let members = confidences(params, dataset, &task.r_idx, level, cfg.signal)?;
    let nonmembers = confidences(params, test, &test_keep, level, cfg.signal)?;
    let attacker = fit_mia_attacker(&members, &nonmembers)?;
    let mia = mia_score(&attacker, &confidences(params, dataset, &task.t_idx, level, cfg.signal)?)?;
    Ok(MetricsReport {
        method: method.into(),
        task: task_descriptor(task),
        scenario: alloc::string::ToString::to_string(&task.scenario),
        ua,
        ra,
        ta,
        ta_all,
        mia,
        rte_seconds,
    })
}

/// Mean absolute difference of UA, RA, TA and MIA.
pub fn gap_of(a: [f64; 4], b: [f64; 4]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 4.0
}

pub fn compute_gap(report: &MetricsReport, retrained: &MetricsReport) -> Result<f64> {
    if report.task != retrained.task {
        return Err(Error::Comparison(format!(
            "reports describe different tasks: `{}` vs `{}`",
            report.task, retrained.task
        )));
    }
    Ok(gap_of(
        [report.ua, report.ra, report.ta, report.mia],
        [retrained.ua, retrained.ra, retrained.ta, retrained.mia],
    ))
}
