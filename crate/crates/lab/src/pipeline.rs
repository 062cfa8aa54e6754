//! Pipeline stages shared by the subcommands, and seeded sweeps.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use unlearn_core::diffnet::ClassifierParams;
use unlearn_core::engines::{pretrain, retrain_reference, run_unlearning, Method, UnlearnOutcome};
use unlearn_core::evalkit::{compute_gap, compute_metrics, MetricsReport};
use unlearn_core::tasks::{build_task, UnlearnTask};
use unlearn_core::taxonomy::generate_synthetic;

use crate::config::{DataSource, ExperimentConfig};
use crate::error::{LabError, LabResult};
use crate::formats::{load_cifar_binary, save_checkpoint, save_task, write_text, DataBundle};
use crate::report::{drops_to_csv, rows_to_csv, trace_to_csv, write_reports, ReportRow};

pub const MANIFEST_VERSION: u32 = 1;
pub const RETRAINED: &str = "retrained";

pub fn build_data(cfg: &ExperimentConfig, seed: u64) -> LabResult<DataBundle> {
    let holdout = cfg.data.test_per_subset;
    match cfg.source()? {
        DataSource::Synthetic => {
            let (full, taxonomy) = generate_synthetic(&cfg.synth_config(seed))?;
            let (train, test) = full.split_holdout(holdout)?;
            Ok(DataBundle { train, test, taxonomy })
        }
        DataSource::Cifar(variant) => {
            let (full, taxonomy) = load_cifar_binary(&cfg.data.paths, variant)?;
            let (train, test) = if cfg.data.test_paths.is_empty() {
                full.split_holdout(holdout)?
            } else {
                (full, load_cifar_binary(&cfg.data.test_paths, variant)?.0)
            };
            Ok(DataBundle { train, test, taxonomy })
        }
    }
}

pub fn build_task_for(cfg: &ExperimentConfig, data: &DataBundle) -> LabResult<UnlearnTask> {
    let (forget, target) = cfg.labels(&data.taxonomy)?;
    Ok(build_task(&data.train, &data.taxonomy, cfg.spec()?, &forget, &target)?)
}

pub fn pretrain_model(cfg: &ExperimentConfig, data: &DataBundle, seed: u64) -> LabResult<ClassifierParams> {
    let level = cfg.spec()?.model_level;
    Ok(pretrain(&data.train, &data.taxonomy, level, &cfg.model.hidden, &cfg.pretrain_config(seed))?)
}

/// The retrained reference and its wall-clock training time.
pub fn retrain_model(cfg: &ExperimentConfig, data: &DataBundle, task: &UnlearnTask, seed: u64) -> LabResult<(ClassifierParams, f64)> {
    let start = Instant::now();
    let params = retrain_reference(task, &data.train, &data.taxonomy, &cfg.model.hidden, &cfg.pretrain_config(seed))?;
    Ok((params, start.elapsed().as_secs_f64()))
}

/// Runs one engine. RTE covers the engine call only.
pub fn unlearn_once(
    cfg: &ExperimentConfig,
    method: Method,
    task: &UnlearnTask,
    data: &DataBundle,
    pretrained: &ClassifierParams,
    seed: u64,
) -> LabResult<UnlearnOutcome> {
    let engine = cfg.engine_config(seed)?;
    let origin = Instant::now();
    let mut clock = || origin.elapsed().as_secs_f64();
    Ok(run_unlearning(method, task, &data.train, &data.taxonomy, pretrained, &engine, Some(&mut clock))?)
}

pub fn evaluate(
    cfg: &ExperimentConfig,
    params: &ClassifierParams,
    task: &UnlearnTask,
    data: &DataBundle,
    method: &str,
    rte_seconds: f64,
) -> LabResult<MetricsReport> {
    Ok(compute_metrics(params, task, &data.train, &data.test, method, rte_seconds, &cfg.eval_config()?)?)
}

pub fn row_against(report: &MetricsReport, seed: u64, reference: Option<&MetricsReport>) -> LabResult<ReportRow> {
    let gap = reference.map(|r| compute_gap(report, r)).transpose()?;
    Ok(ReportRow::new(report, seed, gap))
}

/// Files written for one method, relative to the output root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub seed: u64,
    pub method: String,
    pub checkpoint: String,
    pub trace: Option<String>,
    pub drops: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub config: String,
    pub results_csv: String,
    pub results_json: String,
    pub tasks: Vec<String>,
    pub pretrained: Vec<String>,
    pub runs: Vec<RunEntry>,
}

impl RunManifest {
    /// Every file the manifest names, relative to the output root.
    pub fn files(&self) -> Vec<&str> {
        let mut out = vec![self.config.as_str(), self.results_csv.as_str(), self.results_json.as_str()];
        out.extend(self.tasks.iter().map(String::as_str));
        out.extend(self.pretrained.iter().map(String::as_str));
        for r in &self.runs {
            out.push(&r.checkpoint);
            out.extend(r.trace.as_deref());
            out.extend(r.drops.as_deref());
        }
        out
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

struct SeedOutput {
    rows: Vec<ReportRow>,
    task: String,
    pretrained: String,
    runs: Vec<RunEntry>,
}

fn rel(dir: &str, name: &str) -> String {
    format!("{dir}/{name}")
}

fn run_seed(cfg: &ExperimentConfig, methods: &[Method], shared: Option<&DataBundle>, seed: u64, root: &Path) -> LabResult<SeedOutput> {
    let owned;
    let data = match shared {
        Some(d) => d,
        None => {
            owned = build_data(cfg, seed)?;
            &owned
        }
    };
    let dir = format!("seed-{seed}");
    let at = |name: &str| root.join(&dir).join(name);
    let task = build_task_for(cfg, data)?;
    save_task(&at("task.txt"), &task)?;

    let pre = pretrain_model(cfg, data, seed)?;
    save_checkpoint(&at("pretrained.ckpt"), &pre)?;

    let (re, re_secs) = retrain_model(cfg, data, &task, seed)?;
    let ckpt = format!("{RETRAINED}.ckpt");
    save_checkpoint(&at(&ckpt), &re)?;
    let reference = evaluate(cfg, &re, &task, data, RETRAINED, re_secs)?;
    let mut rows = vec![row_against(&reference, seed, Some(&reference))?];
    let mut runs = vec![RunEntry {
        seed,
        method: RETRAINED.into(),
        checkpoint: rel(&dir, &ckpt),
        trace: None,
        drops: None,
    }];

    for &m in methods {
        let out = unlearn_once(cfg, m, &task, data, &pre, seed)?;
        let report = evaluate(cfg, &out.params, &task, data, m.name(), out.rte_seconds)?;
        rows.push(row_against(&report, seed, Some(&reference))?);
        let names = [format!("{m}.ckpt"), format!("{m}.trace.csv"), format!("{m}.drops.csv")];
        save_checkpoint(&at(&names[0]), &out.params)?;
        write_text(&at(&names[1]), &trace_to_csv(&out.trace)?)?;
        write_text(&at(&names[2]), &drops_to_csv(&out.trace, &data.taxonomy, task.spec.data_level)?)?;
        runs.push(RunEntry {
            seed,
            method: m.name().into(),
            checkpoint: rel(&dir, &names[0]),
            trace: Some(rel(&dir, &names[1])),
            drops: Some(rel(&dir, &names[2])),
        });
    }
    write_text(&at("report.csv"), &rows_to_csv(&rows)?)?;
    Ok(SeedOutput {
        rows,
        task: rel(&dir, "task.txt"),
        pretrained: rel(&dir, "pretrained.ckpt"),
        runs,
    })
}

/// Every configured method on every seed, each seed alongside its
/// retrained reference. Seeds run on separate threads when `run.parallel`
/// is set; each writes only under its own `seed-N` directory.
pub fn run_sweep(cfg: &ExperimentConfig, root: &Path) -> LabResult<(Vec<ReportRow>, RunManifest)> {
    cfg.validate()?;
    let started = unix_now();
    let methods = cfg.methods()?;
    let shared = if cfg.data_is_fixed() {
        Some(build_data(cfg, cfg.run.seeds[0])?)
    } else {
        None
    };
    std::fs::create_dir_all(root).map_err(|e| LabError::io(root, e))?;

    let outputs: Vec<SeedOutput> = if cfg.run.parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = cfg
                .run
                .seeds
                .iter()
                .map(|&seed| {
                    let (methods, shared) = (&methods, shared.as_ref());
                    s.spawn(move || run_seed(cfg, methods, shared, seed, root))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect::<LabResult<_>>()
        })?
    } else {
        cfg.run
            .seeds
            .iter()
            .map(|&seed| run_seed(cfg, &methods, shared.as_ref(), seed, root))
            .collect::<LabResult<_>>()?
    };

    write_text(&root.join("config.toml"), &cfg.to_toml())?;
    let rows: Vec<ReportRow> = outputs.iter().flat_map(|o| o.rows.iter().cloned()).collect();
    write_reports(&root.join("results.csv"), &root.join("results.json"), &rows)?;
    let manifest = RunManifest {
        version: MANIFEST_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.hash(),
        started_unix: started,
        finished_unix: unix_now(),
        config: "config.toml".into(),
        results_csv: "results.csv".into(),
        results_json: "results.json".into(),
        tasks: outputs.iter().map(|o| o.task.clone()).collect(),
        pretrained: outputs.iter().map(|o| o.pretrained.clone()).collect(),
        runs: outputs.into_iter().flat_map(|o| o.runs).collect(),
    };
    write_text(&root.join("manifest.json"), &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    Ok((rows, manifest))
}

/// `UNLEARN_OUT` when set, otherwise the configured directory.
pub fn output_root(configured: &str) -> PathBuf {
    std::env::var_os("UNLEARN_OUT").map_or_else(|| PathBuf::from(configured), PathBuf::from)
}
