//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use unlearn_core::engines::Method;

use crate::config::{schema_text, ExperimentConfig};
use crate::error::{LabError, LabResult};
use crate::formats::{load_checkpoint, load_dataset, load_task, save_checkpoint, save_dataset, save_task, write_text, DataBundle};
use crate::pipeline::{self, RETRAINED};
use crate::report::{aggregate, drops_to_csv, rows_from_csv, summary_to_csv, trace_to_csv, write_reports};

#[derive(Parser, Debug)]
#[command(name = "unlearn-lab", version, about = "Target-aware unlearning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed; defaults to the first of `run.seeds`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args, Debug, Clone)]
struct Inputs {
    /// Dataset file from `gen-data`; generated from the config when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Task file; built from the config when omitted.
    #[arg(long)]
    task: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a dataset and taxonomy file.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "data.txt")]
        out: PathBuf,
    },
    /// Train the original model and write its checkpoint.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "pretrained.ckpt")]
        out: PathBuf,
    },
    /// Run one method on one task; writes checkpoint, trace and report.
    Unlearn {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// Engine name, or `retrained` for the exact reference.
        #[arg(long)]
        method: String,
        /// Pretrained checkpoint; not needed for `retrained`.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Retrained checkpoint used to fill the gap column.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute a report from a checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Method name recorded in the report.
        #[arg(long, default_value = "evaluated")]
        method: String,
        #[arg(long, default_value = "evaluate.csv")]
        out: PathBuf,
    },
    /// Every configured method on every seed, with retrained references.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run seeds on separate threads.
        #[arg(long)]
        parallel: bool,
    },
    /// Aggregate report CSVs into mean/std tables.
    Report {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "summary.csv")]
        out: PathBuf,
    },
    /// Print every config key and its default.
    Schema,
}

fn load_config(path: Option<&Path>) -> LabResult<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

struct Context {
    cfg: ExperimentConfig,
    seed: u64,
    root: PathBuf,
}

impl Context {
    fn new(common: &Common) -> LabResult<Self> {
        let cfg = load_config(common.config.as_deref())?;
        let seed = common.seed.unwrap_or(cfg.run.seeds[0]);
        let root = pipeline::output_root(&cfg.run.out_dir);
        Ok(Self { cfg, seed, root })
    }

    /// Relative output paths land under the output root.
    fn out(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    fn data(&self, path: Option<&Path>) -> LabResult<DataBundle> {
        match path {
            Some(p) => load_dataset(p),
            None => pipeline::build_data(&self.cfg, self.seed),
        }
    }

    fn task(&self, inputs: &Inputs, data: &DataBundle) -> LabResult<unlearn_core::tasks::UnlearnTask> {
        match &inputs.task {
            Some(p) => load_task(p, &data.train, &data.taxonomy),
            None => pipeline::build_task_for(&self.cfg, data),
        }
    }
}

fn dispatch(cli: Cli, stdout: &mut dyn Write) -> LabResult<()> {
    match cli.command {
        Command::Schema => {
            stdout.write_all(schema_text().as_bytes()).map_err(|e| LabError::io("<stdout>", e))?;
        }
        Command::GenData { common, out } => {
            let ctx = Context::new(&common)?;
            let path = ctx.out(&out);
            save_dataset(&path, &ctx.data(None)?)?;
            writeln!(stdout, "{}", path.display()).ok();
        }
        Command::Pretrain { common, data, out } => {
            let ctx = Context::new(&common)?;
            let bundle = ctx.data(data.as_deref())?;
            let params = pipeline::pretrain_model(&ctx.cfg, &bundle, ctx.seed)?;
            let path = ctx.out(&out);
            save_checkpoint(&path, &params)?;
            writeln!(stdout, "{}", path.display()).ok();
        }
        Command::Unlearn {
            common,
            inputs,
            method,
            model,
            reference,
            out,
        } => {
            let ctx = Context::new(&common)?;
            let data = ctx.data(inputs.data.as_deref())?;
            let task = ctx.task(&inputs, &data)?;
            let dir = ctx.out(&out.unwrap_or_else(|| PathBuf::from(format!("unlearn-{method}"))));
            save_task(&dir.join("task.txt"), &task)?;
            let (params, rte) = if method == RETRAINED {
                pipeline::retrain_model(&ctx.cfg, &data, &task, ctx.seed)?
            } else {
                let m = Method::parse(&method).map_err(|e| LabError::config("method", e.to_string()))?;
                let model = model.ok_or_else(|| LabError::Usage("unlearn needs --model for engine methods".into()))?;
                let pre = load_checkpoint(&model)?;
                let run = pipeline::unlearn_once(&ctx.cfg, m, &task, &data, &pre, ctx.seed)?;
                write_text(&dir.join(format!("{method}.trace.csv")), &trace_to_csv(&run.trace)?)?;
                write_text(
                    &dir.join(format!("{method}.drops.csv")),
                    &drops_to_csv(&run.trace, &data.taxonomy, task.spec.data_level)?,
                )?;
                (run.params, run.rte_seconds)
            };
            save_checkpoint(&dir.join(format!("{method}.ckpt")), &params)?;
            let report = pipeline::evaluate(&ctx.cfg, &params, &task, &data, &method, rte)?;
            let reference = match reference {
                Some(p) => Some(pipeline::evaluate(&ctx.cfg, &load_checkpoint(&p)?, &task, &data, RETRAINED, 0.0)?),
                None => None,
            };
            let row = pipeline::row_against(&report, ctx.seed, reference.as_ref())?;
            write_reports(&dir.join("report.csv"), &dir.join("report.json"), &[row])?;
            writeln!(stdout, "{}", dir.display()).ok();
        }
        Command::Evaluate {
            common,
            inputs,
            model,
            reference,
            method,
            out,
        } => {
            let ctx = Context::new(&common)?;
            let data = ctx.data(inputs.data.as_deref())?;
            let task = ctx.task(&inputs, &data)?;
            let report = pipeline::evaluate(&ctx.cfg, &load_checkpoint(&model)?, &task, &data, &method, 0.0)?;
            let reference = match reference {
                Some(p) => Some(pipeline::evaluate(&ctx.cfg, &load_checkpoint(&p)?, &task, &data, RETRAINED, 0.0)?),
                None => None,
            };
            let row = pipeline::row_against(&report, ctx.seed, reference.as_ref())?;
            let path = ctx.out(&out);
            write_reports(&path, &path.with_extension("json"), &[row])?;
            writeln!(stdout, "{}", path.display()).ok();
        }
        Command::Sweep { config, parallel } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.run.parallel |= parallel;
            let root = pipeline::output_root(&cfg.run.out_dir);
            let (rows, _) = pipeline::run_sweep(&cfg, &root)?;
            writeln!(stdout, "{} rows -> {}", rows.len(), root.join("results.csv").display()).ok();
        }
        Command::Report { config, inputs, out } => {
            let cfg = load_config(config.as_deref())?;
            let mut rows = Vec::new();
            for p in &inputs {
                rows.extend(rows_from_csv(&crate::formats::read_text(p)?)?);
            }
            let path = if out.is_absolute() {
                out
            } else {
                pipeline::output_root(&cfg.run.out_dir).join(out)
            };
            write_text(&path, &summary_to_csv(&aggregate(&rows))?)?;
            writeln!(stdout, "{}", path.display()).ok();
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the subcommand and returns
/// the process exit status. Usage and errors go to `stderr`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            sink.write_all(text.as_bytes()).ok();
            return code;
        }
    };
    match dispatch(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            writeln!(stderr, "error: {e}").ok();
            1
        }
    }
}
