//! Experiment configuration: TOML tables whose dotted keys mirror the
//! sections below, resolved into the core's typed configs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use unlearn_core::diffnet::TrainConfig;
use unlearn_core::engines::{EngineConfig, Method, UfMode};
use unlearn_core::evalkit::{ConfidenceSignal, EvalConfig};
use unlearn_core::schedules::{AnnealMode, AnnealSchedule, ClassSignal, Granularity, TauPolicy};
use unlearn_core::tasks::ScenarioSpec;
use unlearn_core::taxonomy::{CifarVariant, DomainLevel, LabelTaxonomy, SynthConfig};

use crate::error::{LabError, LabResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// `synthetic`, `cifar10` or `cifar100`.
    pub source: String,
    /// CIFAR training batch files.
    pub paths: Vec<String>,
    /// CIFAR test batch files; when empty the held-out split is drawn from
    /// the training files.
    pub test_paths: Vec<String>,
    /// Fixed generator seed. Unset means each run seed draws its own data.
    pub seed: Option<u64>,
    pub test_per_subset: usize,
    pub superclasses: usize,
    pub classes_per_superclass: usize,
    pub subsets_per_class: usize,
    pub samples_per_subset: usize,
    pub width: usize,
    pub sigma_super: f64,
    pub sigma_class: f64,
    pub sigma_subset: f64,
    pub sigma_noise: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            source: "synthetic".into(),
            paths: Vec::new(),
            test_paths: Vec::new(),
            seed: None,
            test_per_subset: 10,
            superclasses: s.superclasses,
            classes_per_superclass: s.classes_per_superclass,
            subsets_per_class: s.subsets_per_class,
            samples_per_subset: s.samples_per_subset,
            width: s.width,
            sigma_super: s.sigma_super,
            sigma_class: s.sigma_class,
            sigma_subset: s.sigma_subset,
            sigma_noise: s.sigma_noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { hidden: vec![64, 32] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub init_scale: f64,
    pub clip_norm: Option<f64>,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            init_scale: t.init_scale,
            clip_norm: t.clip_norm,
        }
    }
}

/// A label given by id or by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelRef {
    Id(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub data_level: String,
    pub model_level: String,
    pub target_level: String,
    pub forget: Vec<LabelRef>,
    pub target: Vec<LabelRef>,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            data_level: "class".into(),
            model_level: "class".into(),
            target_level: "class".into(),
            forget: vec![LabelRef::Id(0)],
            target: vec![LabelRef::Id(0)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnlearnSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip_norm: Option<f64>,
    pub k: f64,
    pub t0: usize,
    pub t1: usize,
    /// Schedule length; unset means `epochs`.
    pub total: Option<usize>,
    pub mode: String,
    pub granularity: String,
    pub quantile: f64,
    pub beta_override: Option<f64>,
    pub class_signal: String,
    pub uf_mode: String,
    pub l1_gamma: f64,
    pub bs_epsilon: f64,
    pub salun_quantile: f64,
    pub salun_alpha: f64,
    pub scrub_alpha: f64,
    pub scrub_gamma: f64,
}

impl Default for UnlearnSection {
    fn default() -> Self {
        let e = EngineConfig::default();
        Self {
            learning_rate: e.train.learning_rate,
            batch_size: e.train.batch_size,
            epochs: e.train.epochs,
            clip_norm: e.train.clip_norm,
            k: e.sched.k,
            t0: e.sched.t0,
            t1: e.sched.t1,
            total: None,
            mode: e.sched.mode.name().into(),
            granularity: e.tau_policy.granularity.name().into(),
            quantile: e.tau_policy.quantile,
            beta_override: e.tau_policy.beta_override,
            class_signal: e.tau_policy.class_signal.name().into(),
            uf_mode: e.uf_mode.name().into(),
            l1_gamma: e.l1_gamma,
            bs_epsilon: e.bs_epsilon,
            salun_quantile: e.salun_gamma_quantile,
            salun_alpha: e.salun_alpha,
            scrub_alpha: e.scrub_alpha,
            scrub_gamma: e.scrub_gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub mia_signal: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            mia_signal: ConfidenceSignal::default().name().into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub methods: Vec<String>,
    pub seeds: Vec<u64>,
    pub out_dir: String,
    pub parallel: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            methods: ["tarf", "ft", "ga", "rl"].map(String::from).to_vec(),
            seeds: (0..5).collect(),
            out_dir: "runs".into(),
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub pretrain: PretrainSection,
    pub task: TaskSection,
    pub unlearn: UnlearnSection,
    pub eval: EvalSection,
    pub run: RunSection,
}

/// Every key with a short description, in schema order.
pub const SCHEMA: &[(&str, &str)] = &[
    ("data.source", "synthetic, cifar10 or cifar100"),
    ("data.paths", "CIFAR training batch files"),
    ("data.test_paths", "CIFAR test batch files; empty draws the held-out split from data.paths"),
    ("data.seed", "fixed generator seed; unset follows each run seed"),
    ("data.test_per_subset", "held-out samples per subset when splitting"),
    ("data.superclasses", "synthetic superclass count"),
    ("data.classes_per_superclass", "synthetic classes per superclass"),
    ("data.subsets_per_class", "synthetic subsets per class"),
    ("data.samples_per_subset", "synthetic samples per subset"),
    ("data.width", "synthetic feature width"),
    ("data.sigma_super", "spread of superclass centres"),
    ("data.sigma_class", "spread of class centres around their superclass"),
    ("data.sigma_subset", "spread of subset centres around their class"),
    ("data.sigma_noise", "per-sample noise"),
    ("model.hidden", "hidden layer widths"),
    ("pretrain.learning_rate", "step size for pretraining and the retrained reference"),
    ("pretrain.batch_size", "mini-batch size"),
    ("pretrain.epochs", "passes over the training data"),
    ("pretrain.init_scale", "uniform init bound times 1/sqrt(fan_in)"),
    ("pretrain.clip_norm", "gradient norm limit; unset disables clipping"),
    ("task.data_level", "level of the forgetting labels: subset, class or superclass"),
    ("task.model_level", "level the classifier predicts"),
    ("task.target_level", "level of the target concept"),
    ("task.forget", "forgetting labels, ids or names"),
    ("task.target", "target labels, ids or names"),
    ("unlearn.learning_rate", "engine step size"),
    ("unlearn.batch_size", "engine mini-batch size"),
    ("unlearn.epochs", "engine epochs"),
    ("unlearn.clip_norm", "engine gradient norm limit; unset disables clipping"),
    ("unlearn.k", "initial forgetting weight"),
    ("unlearn.t0", "epochs before the end at which the weight reaches zero"),
    ("unlearn.t1", "epoch at which the retaining mask is frozen"),
    ("unlearn.total", "schedule length; unset uses unlearn.epochs"),
    ("unlearn.mode", "annealed or constant"),
    ("unlearn.granularity", "classwise or instancewise mask for the prelude"),
    ("unlearn.quantile", "fraction withheld by the per-sample mask"),
    ("unlearn.beta_override", "fixed mask threshold; unset estimates it"),
    ("unlearn.class_signal", "accuracy or loss change used by class-wise identification"),
    ("unlearn.uf_mode", "clean zeroes withheld samples, ascend pushes them away"),
    ("unlearn.l1_gamma", "sparsity weight of l1"),
    ("unlearn.bs_epsilon", "boundary shrink step"),
    ("unlearn.salun_quantile", "saliency cut quantile"),
    ("unlearn.salun_alpha", "weight of the relabelled forgetting term in salun"),
    ("unlearn.scrub_alpha", "distillation weight on remaining data in scrub"),
    ("unlearn.scrub_gamma", "task loss weight in scrub"),
    ("eval.mia_signal", "attacker confidence: true-label or max-softmax"),
    ("run.methods", "engines to run: tarf, tarf-i, ft, ga, rl, l1, bs, salun, scrub"),
    ("run.seeds", "run seeds"),
    ("run.out_dir", "output root; UNLEARN_OUT overrides it"),
    ("run.parallel", "run seeds on separate threads"),
];

fn flatten(prefix: &str, v: &toml::Value, out: &mut BTreeMap<String, String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

/// Dotted keys of a config and their TOML-rendered values. Unset options
/// are absent.
pub fn flattened(cfg: &ExperimentConfig) -> BTreeMap<String, String> {
    let value = toml::Value::try_from(cfg).expect("config serializes");
    let mut out = BTreeMap::new();
    flatten("", &value, &mut out);
    out
}

pub fn schema_text() -> String {
    let defaults = flattened(&ExperimentConfig::default());
    let width = SCHEMA.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (key, doc) in SCHEMA {
        let value = defaults.get(*key).map_or("(unset)", String::as_str);
        out.push_str(&format!("{key:<width$} = {value:<18} # {doc}\n"));
    }
    out
}

fn prefixed<T>(section: &str, r: unlearn_core::Result<T>) -> LabResult<T> {
    r.map_err(|e| match e {
        unlearn_core::Error::Config { field, reason } => LabError::config(format!("{section}.{field}"), reason),
        other => LabError::config(section, other.to_string()),
    })
}

pub enum DataSource {
    Synthetic,
    Cifar(CifarVariant),
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> LabResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let field = e.message().split('`').nth(1).unwrap_or("config").to_string();
            LabError::config(field, e.to_string().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> LabResult<Self> {
        Self::from_toml(&crate::formats::read_text(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> LabResult<()> {
        let source = self.source()?;
        if matches!(source, DataSource::Cifar(_)) && self.data.paths.is_empty() {
            return Err(LabError::config("data.paths", "CIFAR sources need at least one batch file"));
        }
        if matches!(source, DataSource::Synthetic) {
            prefixed("data", self.synth_config(0).validate())?;
        }
        self.spec()?;
        if self.task.forget.is_empty() {
            return Err(LabError::config("task.forget", "needs at least one label"));
        }
        if self.task.target.is_empty() {
            return Err(LabError::config("task.target", "needs at least one label"));
        }
        prefixed("pretrain", self.pretrain_config(0).validate())?;
        prefixed("unlearn", self.engine_config(0)?.validate())?;
        self.eval_config()?;
        self.methods()?;
        if self.run.seeds.is_empty() {
            return Err(LabError::config("run.seeds", "needs at least one seed"));
        }
        Ok(())
    }

    pub fn source(&self) -> LabResult<DataSource> {
        match self.data.source.as_str() {
            "synthetic" => Ok(DataSource::Synthetic),
            other => CifarVariant::parse(other)
                .map(DataSource::Cifar)
                .map_err(|_| LabError::config("data.source", format!("unknown source `{other}`"))),
        }
    }

    pub fn synth_config(&self, run_seed: u64) -> SynthConfig {
        let d = &self.data;
        SynthConfig {
            superclasses: d.superclasses,
            classes_per_superclass: d.classes_per_superclass,
            subsets_per_class: d.subsets_per_class,
            samples_per_subset: d.samples_per_subset,
            width: d.width,
            sigma_super: d.sigma_super,
            sigma_class: d.sigma_class,
            sigma_subset: d.sigma_subset,
            sigma_noise: d.sigma_noise,
            seed: d.seed.unwrap_or(run_seed),
        }
    }

    /// True when every run seed shares one dataset.
    pub fn data_is_fixed(&self) -> bool {
        self.data.source != "synthetic" || self.data.seed.is_some()
    }

    pub fn spec(&self) -> LabResult<ScenarioSpec> {
        let level = |field: &str, s: &str| {
            DomainLevel::parse(s).map_err(|e| LabError::config(format!("task.{field}"), e.to_string()))
        };
        Ok(ScenarioSpec::new(
            level("data_level", &self.task.data_level)?,
            level("model_level", &self.task.model_level)?,
            level("target_level", &self.task.target_level)?,
        ))
    }

    /// Forgetting and target label ids, checked against `taxonomy`.
    pub fn labels(&self, taxonomy: &LabelTaxonomy) -> LabResult<(Vec<usize>, Vec<usize>)> {
        let spec = self.spec()?;
        let resolve = |field: &str, level: DomainLevel, refs: &[LabelRef]| -> LabResult<Vec<usize>> {
            refs.iter()
                .map(|r| {
                    let id = match r {
                        LabelRef::Id(id) => Some(*id).filter(|&i| i < taxonomy.count(level)),
                        LabelRef::Name(name) => taxonomy.id_of(level, name),
                    };
                    id.ok_or_else(|| LabError::config(format!("task.{field}"), format!("no {level} label {r:?}")))
                })
                .collect()
        };
        Ok((
            resolve("forget", spec.data_level, &self.task.forget)?,
            resolve("target", spec.target_level, &self.task.target)?,
        ))
    }

    pub fn pretrain_config(&self, seed: u64) -> TrainConfig {
        let p = &self.pretrain;
        TrainConfig {
            learning_rate: p.learning_rate,
            batch_size: p.batch_size,
            epochs: p.epochs,
            seed,
            init_scale: p.init_scale,
            clip_norm: p.clip_norm,
        }
    }

    pub fn engine_config(&self, seed: u64) -> LabResult<EngineConfig> {
        let u = &self.unlearn;
        fn field(name: &'static str) -> impl Fn(unlearn_core::Error) -> LabError {
            move |e| LabError::config(format!("unlearn.{name}"), e.to_string())
        }
        let train = TrainConfig {
            learning_rate: u.learning_rate,
            batch_size: u.batch_size,
            epochs: u.epochs,
            seed,
            init_scale: self.pretrain.init_scale,
            clip_norm: u.clip_norm,
        };
        Ok(EngineConfig {
            train,
            sched: AnnealSchedule {
                k: u.k,
                t0: u.t0,
                t1: u.t1,
                total: u.total.unwrap_or(u.epochs),
                mode: AnnealMode::parse(&u.mode).map_err(field("mode"))?,
            },
            tau_policy: TauPolicy {
                granularity: Granularity::parse(&u.granularity).map_err(field("granularity"))?,
                declared_count: 0,
                quantile: u.quantile,
                beta_override: u.beta_override,
                class_signal: ClassSignal::parse(&u.class_signal).map_err(field("class_signal"))?,
            },
            uf_mode: UfMode::parse(&u.uf_mode).map_err(field("uf_mode"))?,
            rl_seed: seed,
            l1_gamma: u.l1_gamma,
            bs_epsilon: u.bs_epsilon,
            salun_gamma_quantile: u.salun_quantile,
            salun_alpha: u.salun_alpha,
            scrub_alpha: u.scrub_alpha,
            scrub_gamma: u.scrub_gamma,
        })
    }

    pub fn eval_config(&self) -> LabResult<EvalConfig> {
        Ok(EvalConfig {
            signal: ConfidenceSignal::parse(&self.eval.mia_signal)
                .map_err(|e| LabError::config("eval.mia_signal", e.to_string()))?,
        })
    }

    pub fn methods(&self) -> LabResult<Vec<Method>> {
        if self.run.methods.is_empty() {
            return Err(LabError::config("run.methods", "needs at least one method"));
        }
        self.run
            .methods
            .iter()
            .map(|m| Method::parse(m).map_err(|e| LabError::config("run.methods", e.to_string())))
            .collect()
    }
}
