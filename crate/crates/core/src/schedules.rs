//! Control signals for target-aware forgetting: the annealed ascent weight,
//! the loss-change indicator, the retaining threshold and the frozen mask.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnnealMode {
    Annealed,
    Constant,
    Increasing,
}

impl AnnealMode {
    pub fn name(self) -> &'static str {
        match self {
            AnnealMode::Annealed => "annealed",
            AnnealMode::Constant => "constant",
            AnnealMode::Increasing => "increasing",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "annealed" => Ok(AnnealMode::Annealed),
            "constant" => Ok(AnnealMode::Constant),
            "increasing" => Ok(AnnealMode::Increasing),
            other => Err(Error::config("mode", format!("unknown anneal mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub k: f64,
    pub t0: usize,
    pub t1: usize,
    pub total: usize,
    pub mode: AnnealMode,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            k: 0.1,
            t0: 2,
            t1: 1,
            total: 10,
            mode: AnnealMode::Annealed,
        }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.k >= 0.0 && self.k.is_finite()) {
            return Err(Error::config("k", "must be a non-negative finite real"));
        }
        if self.t1 > self.total {
            return Err(Error::config("t1", format!("{} exceeds T = {}", self.t1, self.total)));
        }
        if self.t0 > self.total {
            return Err(Error::config("t0", format!("{} exceeds T = {}", self.t0, self.total)));
        }
        Ok(())
    }
}

/// Ascent weight at epoch `t`.
pub fn k_at(sched: &AnnealSchedule, t: usize) -> Result<f64> {
    if t > sched.total {
        return Err(Error::Range(format!("epoch {t} beyond T = {}", sched.total)));
    }
    if sched.total == 0 {
        return Ok(if sched.mode == AnnealMode::Constant { sched.k } else { 0.0 });
    }
    let big_t = sched.total as f64;
    Ok(match sched.mode {
        AnnealMode::Annealed => {
            let remaining = sched.total as i64 - t as i64 - sched.t0 as i64;
            if remaining <= 0 {
                0.0
            } else {
                sched.k * remaining as f64 / big_t
            }
        }
        AnnealMode::Constant => sched.k,
        AnnealMode::Increasing => sched.k * (t + sched.t0) as f64 / big_t,
    })
}

/// `|ℓ_before − ℓ_after|`.
pub fn con_indicator(loss_before: f64, loss_after: f64) -> Result<f64> {
    if !loss_before.is_finite() || !loss_after.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss pair ({loss_before}, {loss_after})")));
    }
    Ok((loss_before - loss_after).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Granularity {
    Classwise,
    Instancewise,
}

impl Granularity {
    pub fn name(self) -> &'static str {
        match self {
            Granularity::Classwise => "classwise",
            Granularity::Instancewise => "instancewise",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "classwise" => Ok(Granularity::Classwise),
            "instancewise" => Ok(Granularity::Instancewise),
            other => Err(Error::config("granularity", format!("unknown granularity `{other}`"))),
        }
    }
}

/// What a class-wise change measures between the pretrained model and the
/// model at the freeze epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ClassSignal {
    /// Absolute accuracy change in percentage points.
    #[default]
    Accuracy,
    /// Absolute change of the class-mean loss.
    Loss,
}

impl ClassSignal {
    pub fn name(self) -> &'static str {
        match self {
            ClassSignal::Accuracy => "accuracy",
            ClassSignal::Loss => "loss",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(ClassSignal::Accuracy),
            "loss" => Ok(ClassSignal::Loss),
            other => Err(Error::config("class_signal", format!("unknown class signal `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauPolicy {
    pub granularity: Granularity,
    /// Number of units to exclude; used class-wise. Engines fill it from
    /// the task's declared count.
    pub declared_count: usize,
    /// Fraction of units to exclude; used instance-wise.
    pub quantile: f64,
    pub beta_override: Option<f64>,
    pub class_signal: ClassSignal,
}

impl Default for TauPolicy {
    fn default() -> Self {
        Self {
            granularity: Granularity::Classwise,
            declared_count: 0,
            quantile: 0.1,
            beta_override: None,
            class_signal: ClassSignal::Accuracy,
        }
    }
}

impl TauPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.granularity == Granularity::Instancewise && !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(Error::config("quantile", "must lie strictly between 0 and 1"));
        }
        if let Some(b) = self.beta_override {
            if b.is_nan() {
                return Err(Error::config("beta_override", "must not be NaN"));
            }
        }
        Ok(())
    }
}

/// Midpoint between the `n`-th and `(n+1)`-th largest values; `+∞` for `n = 0`.
fn top_n_cut(changes: &[f64], n: usize) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    let mut sorted = changes.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    if n >= sorted.len() {
        return f64::NEG_INFINITY;
    }
    (sorted[n - 1] + sorted[n]) / 2.0
}

/// Threshold above which units are withheld from retaining.
///
/// Instance-wise, the `(1 − q)`-quantile is taken as the midpoint cut that
/// leaves `round(q·n)` units strictly above it.
pub fn estimate_beta(changes: &[f64], policy: &TauPolicy) -> Result<f64> {
    if let Some(b) = policy.beta_override {
        return Ok(b);
    }
    policy.validate()?;
    if changes.is_empty() {
        return Err(Error::Data("no units to rank".into()));
    }
    if let Some(bad) = changes.iter().find(|c| !c.is_finite()) {
        return Err(Error::Numeric(format!("non-finite change {bad}")));
    }
    match policy.granularity {
        Granularity::Classwise => {
            if policy.declared_count >= changes.len() {
                return Err(Error::Policy(format!(
                    "declared count {} needs more than {} units",
                    policy.declared_count,
                    changes.len()
                )));
            }
            Ok(top_n_cut(changes, policy.declared_count))
        }
        Granularity::Instancewise => {
            let n = libm::round(policy.quantile * changes.len() as f64) as usize;
            Ok(top_n_cut(changes, n))
        }
    }
}

/// Binary retain mask, one value per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct TauMask {
    values: Vec<u8>,
    frozen_at: usize,
    beta: f64,
}

impl TauMask {
    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn frozen_at(&self) -> usize {
        self.frozen_at
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mask value at epoch `t`. Before the freeze epoch nothing is retained;
    /// afterwards the stored snapshot is returned unchanged.
    pub fn at(&self, unit: usize, t: usize) -> u8 {
        if t < self.frozen_at {
            0
        } else {
            self.values[unit]
        }
    }

    pub fn retained(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }
}

/// Builds the mask from the changes measured at `t1`. For `t < t1` every
/// value is 0; ties at `beta` are excluded.
pub fn tau_mask(changes: &[f64], beta: f64, t: usize, t1: usize) -> TauMask {
    let values = if t < t1 {
        alloc::vec![0; changes.len()]
    } else {
        changes.iter().map(|&c| u8::from(c < beta)).collect()
    };
    TauMask {
        values,
        frozen_at: t1.min(t),
        beta,
    }
}
