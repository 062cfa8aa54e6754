//! Versioned text formats for checkpoints, datasets and tasks, plus CIFAR
//! file ingestion. Reals are written in shortest round-trip form, so a
//! save followed by a load reproduces every bit.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use unlearn_core::diffnet::{Architecture, ClassifierParams, Dense, PARAMS_VERSION};
use unlearn_core::tasks::{build_task, ScenarioSpec, UnlearnTask};
use unlearn_core::taxonomy::{parse_cifar_binary, CifarVariant, Dataset, DomainLevel, LabelTaxonomy, Provenance, Sample};
use unlearn_core::{Error, Result};

use crate::error::{LabError, LabResult};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const DATASET_VERSION: u32 = 1;
pub const TASK_VERSION: u32 = 1;

const CHECKPOINT_MAGIC: &str = "unlearn-checkpoint";
const DATASET_MAGIC: &str = "unlearn-dataset";
const TASK_MAGIC: &str = "unlearn-task";

fn format_err(what: &str, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("{what} line {line}: {msg}"))
}

/// Line cursor that skips blank lines and reports 1-based line numbers.
struct Cursor<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    what: &'static str,
    last: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str, what: &'static str) -> Self {
        Self {
            lines: text.lines().enumerate(),
            what,
            last: 0,
        }
    }

    fn next(&mut self) -> Result<(usize, Vec<&'a str>)> {
        for (i, line) in self.lines.by_ref() {
            self.last = i + 1;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if !toks.is_empty() {
                return Ok((i + 1, toks));
            }
        }
        Err(Error::Format(format!("{} is truncated after line {}", self.what, self.last)))
    }

    /// Next line, which must start with `key`; returns the remaining tokens.
    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (n, toks) = self.next()?;
        if toks[0] != key {
            return Err(format_err(self.what, n, format!("expected `{key}`, found `{}`", toks[0])));
        }
        Ok((n, toks[1..].to_vec()))
    }

    fn single<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let (n, toks) = self.keyed(key)?;
        if toks.len() != 1 {
            return Err(format_err(self.what, n, format!("`{key}` takes one value")));
        }
        self.parse(n, toks[0])
    }

    fn parse<T: FromStr>(&self, line: usize, tok: &str) -> Result<T> {
        tok.parse().map_err(|_| format_err(self.what, line, format!("cannot parse `{tok}`")))
    }

    fn parse_all<T: FromStr>(&self, line: usize, toks: &[&str]) -> Result<Vec<T>> {
        toks.iter().map(|t| self.parse(line, t)).collect()
    }

    fn header(&mut self, magic: &str, version: u32) -> Result<()> {
        let (n, toks) = self.keyed(magic)?;
        let found: u32 = match toks.as_slice() {
            [v] => self.parse(n, v)?,
            _ => return Err(format_err(self.what, n, "header needs a version")),
        };
        if found != version {
            return Err(format_err(self.what, n, format!("version {found} is not supported (expected {version})")));
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        self.keyed("end")?;
        if let Ok((n, _)) = self.next() {
            return Err(format_err(self.what, n, "content after `end`"));
        }
        Ok(())
    }
}

fn push_reals(out: &mut String, key: &str, values: &[f64]) {
    out.push_str(key);
    for v in values {
        write!(out, " {v:?}").unwrap();
    }
    out.push('\n');
}

pub(crate) fn read_text(path: &Path) -> LabResult<String> {
    std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> LabResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| LabError::io(path, e))
}

// ---------------------------------------------------------------- checkpoints

pub fn checkpoint_to_string(params: &ClassifierParams) -> String {
    let arch = &params.arch;
    let mut out = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n");
    writeln!(out, "arch {} {}", arch.input_dim, arch.output_dim).unwrap();
    let hidden: Vec<String> = arch.hidden_dims.iter().map(|h| h.to_string()).collect();
    writeln!(out, "hidden {}", hidden.join(" ")).unwrap();
    for layer in &params.layers {
        writeln!(out, "layer {} {}", layer.fan_in, layer.fan_out).unwrap();
        push_reals(&mut out, "weights", &layer.weights);
        push_reals(&mut out, "bias", &layer.bias);
    }
    out.push_str("end\n");
    out
}

pub fn checkpoint_from_str(text: &str) -> Result<ClassifierParams> {
    let mut c = Cursor::new(text, "checkpoint");
    c.header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let (n, toks) = c.keyed("arch")?;
    let dims: Vec<usize> = c.parse_all(n, &toks)?;
    let [input_dim, output_dim] = dims[..] else {
        return Err(format_err("checkpoint", n, "`arch` takes input and output widths"));
    };
    let (n, toks) = c.keyed("hidden")?;
    let hidden: Vec<usize> = c.parse_all(n, &toks)?;
    let arch = Architecture::new(input_dim, hidden, output_dim).map_err(|e| format_err("checkpoint", n, e))?;
    let mut layers = Vec::new();
    for (fan_in, fan_out) in arch.layer_dims() {
        let (n, toks) = c.keyed("layer")?;
        let shape: Vec<usize> = c.parse_all(n, &toks)?;
        if shape != [fan_in, fan_out] {
            return Err(format_err("checkpoint", n, format!("layer shape {shape:?} does not match [{fan_in}, {fan_out}]")));
        }
        let (n, toks) = c.keyed("weights")?;
        let weights: Vec<f64> = c.parse_all(n, &toks)?;
        if weights.len() != fan_in * fan_out {
            return Err(format_err("checkpoint", n, format!("{} weights for a {fan_in}x{fan_out} layer", weights.len())));
        }
        let (n, toks) = c.keyed("bias")?;
        let bias: Vec<f64> = c.parse_all(n, &toks)?;
        if bias.len() != fan_out {
            return Err(format_err("checkpoint", n, format!("{} biases for width {fan_out}", bias.len())));
        }
        layers.push(Dense {
            fan_in,
            fan_out,
            weights,
            bias,
        });
    }
    c.finish()?;
    let params = ClassifierParams {
        arch,
        layers,
        version: PARAMS_VERSION,
    };
    params.validate().map_err(|e| Error::Format(format!("checkpoint: {e}")))?;
    if !params.is_finite() {
        return Err(Error::Format("checkpoint holds non-finite parameters".into()));
    }
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &ClassifierParams) -> LabResult<()> {
    write_text(path, &checkpoint_to_string(params))
}

pub fn load_checkpoint(path: &Path) -> LabResult<ClassifierParams> {
    Ok(checkpoint_from_str(&read_text(path)?)?)
}

// ------------------------------------------------------------------ datasets

/// Training and held-out samples sharing one taxonomy.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBundle {
    pub train: Dataset,
    pub test: Dataset,
    pub taxonomy: LabelTaxonomy,
}

fn checked_name(name: &str) -> Result<&str> {
    if name.is_empty() || name.chars().any(char::is_whitespace) {
        return Err(Error::Format(format!("label name `{name}` cannot be written as a single token")));
    }
    Ok(name)
}

pub fn dataset_to_string(bundle: &DataBundle) -> Result<String> {
    let tax = &bundle.taxonomy;
    let train = &bundle.train;
    if bundle.test.width() != train.width() {
        return Err(Error::Shape("training and held-out widths differ".into()));
    }
    let mut out = format!("{DATASET_MAGIC} {DATASET_VERSION}\n");
    writeln!(out, "provenance {}", train.provenance().name()).unwrap();
    writeln!(out, "seed {}", train.seed()).unwrap();
    writeln!(out, "width {}", train.width()).unwrap();
    for name in tax.names(DomainLevel::Superclass) {
        writeln!(out, "superclass {}", checked_name(name)?).unwrap();
    }
    for (name, sup) in tax.names(DomainLevel::Class).iter().zip(tax.class_to_super()) {
        writeln!(out, "class {sup} {}", checked_name(name)?).unwrap();
    }
    for (name, class) in tax.names(DomainLevel::Subset).iter().zip(tax.subset_to_class()) {
        writeln!(out, "subset {class} {}", checked_name(name)?).unwrap();
    }
    writeln!(out, "samples {}", train.len() + bundle.test.len()).unwrap();
    for (split, data) in [("train", train), ("test", &bundle.test)] {
        for s in data.samples() {
            write!(out, "{split} {} {} {}", s.subset, s.class, s.superclass).unwrap();
            for v in &s.features {
                write!(out, " {v:?}").unwrap();
            }
            out.push('\n');
        }
    }
    out.push_str("end\n");
    Ok(out)
}

pub fn dataset_from_str(text: &str) -> Result<DataBundle> {
    let mut c = Cursor::new(text, "dataset");
    c.header(DATASET_MAGIC, DATASET_VERSION)?;
    let provenance = Provenance::parse(&c.single::<String>("provenance")?)?;
    let seed: u64 = c.single("seed")?;
    let width: usize = c.single("width")?;

    let mut supers = Vec::new();
    let mut classes = Vec::new();
    let mut class_to_super = Vec::new();
    let mut subsets = Vec::new();
    let mut subset_to_class = Vec::new();
    let count: usize = loop {
        let (n, toks) = c.next()?;
        match (toks[0], toks.len()) {
            ("superclass", 2) => supers.push(toks[1].to_string()),
            ("class", 3) => {
                class_to_super.push(c.parse(n, toks[1])?);
                classes.push(toks[2].to_string());
            }
            ("subset", 3) => {
                subset_to_class.push(c.parse(n, toks[1])?);
                subsets.push(toks[2].to_string());
            }
            ("samples", 2) => break c.parse(n, toks[1])?,
            (key, _) => return Err(format_err("dataset", n, format!("unexpected `{key}` in label section"))),
        }
    };
    let taxonomy = LabelTaxonomy::new(supers, classes, subsets, class_to_super, subset_to_class)
        .map_err(|e| Error::Format(format!("dataset taxonomy: {e}")))?;

    let mut train = Vec::new();
    let mut test = Vec::new();
    for _ in 0..count {
        let (n, toks) = c.next()?;
        if toks.len() != 4 + width {
            return Err(format_err("dataset", n, format!("expected {} fields, found {}", 4 + width, toks.len())));
        }
        let sample = Sample {
            subset: c.parse(n, toks[1])?,
            class: c.parse(n, toks[2])?,
            superclass: c.parse(n, toks[3])?,
            features: c.parse_all(n, &toks[4..])?,
        };
        if sample.features.iter().any(|v| !v.is_finite()) {
            return Err(format_err("dataset", n, "non-finite feature"));
        }
        taxonomy.check_sample(&sample).map_err(|e| format_err("dataset", n, e))?;
        match toks[0] {
            "train" => train.push(sample),
            "test" => test.push(sample),
            other => return Err(format_err("dataset", n, format!("unknown split `{other}`"))),
        }
    }
    c.finish()?;
    Ok(DataBundle {
        train: Dataset::new(train, width, provenance, seed)?,
        test: Dataset::new(test, width, provenance, seed)?,
        taxonomy,
    })
}

pub fn save_dataset(path: &Path, bundle: &DataBundle) -> LabResult<()> {
    write_text(path, &dataset_to_string(bundle)?)
}

pub fn load_dataset(path: &Path) -> LabResult<DataBundle> {
    Ok(dataset_from_str(&read_text(path)?)?)
}

/// Reads and concatenates CIFAR binary batch files.
pub fn load_cifar_binary(paths: &[impl AsRef<Path>], variant: CifarVariant) -> LabResult<(Dataset, LabelTaxonomy)> {
    let mut bytes = Vec::new();
    for p in paths {
        let p = p.as_ref();
        bytes.extend(std::fs::read(p).map_err(|e| LabError::io(p, e))?);
    }
    Ok(parse_cifar_binary(&bytes, variant)?)
}

// --------------------------------------------------------------------- tasks

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn task_to_string(task: &UnlearnTask) -> String {
    let spec = task.spec;
    let mut out = format!("{TASK_MAGIC} {TASK_VERSION}\n");
    writeln!(out, "scenario {}", task.scenario).unwrap();
    writeln!(out, "levels {} {} {}", spec.data_level, spec.model_level, spec.target_level).unwrap();
    writeln!(out, "forget {}", join(&task.forgetting_labels)).unwrap();
    writeln!(out, "target {}", join(&task.target_labels)).unwrap();
    writeln!(out, "declared {}", task.declared_unidentified_count).unwrap();
    for (key, idx) in [
        ("f", &task.f_idx),
        ("t", &task.t_idx),
        ("uf", &task.uf_idx),
        ("r", &task.r_idx),
        ("un", &task.un_idx),
    ] {
        writeln!(out, "{key} {}", join(idx)).unwrap();
    }
    out.push_str("end\n");
    out
}

/// Parses a task document and checks it against the dataset it indexes:
/// the task is rebuilt from its levels and labels and must agree exactly.
pub fn task_from_str(text: &str, dataset: &Dataset, taxonomy: &LabelTaxonomy) -> Result<UnlearnTask> {
    let mut c = Cursor::new(text, "task");
    c.header(TASK_MAGIC, TASK_VERSION)?;
    let (n, scenario) = c.keyed("scenario")?;
    let scenario = scenario.join(" ");
    let (lv, toks) = c.keyed("levels")?;
    let levels: Vec<DomainLevel> = toks
        .iter()
        .map(|t| DomainLevel::parse(t).map_err(|e| format_err("task", lv, e)))
        .collect::<Result<_>>()?;
    let [d, m, t] = levels[..] else {
        return Err(format_err("task", lv, "`levels` takes three label levels"));
    };
    let mut lists = Vec::new();
    for key in ["forget", "target"] {
        let (n, toks) = c.keyed(key)?;
        lists.push(c.parse_all::<usize>(n, &toks)?);
    }
    let declared: usize = {
        let (n, toks) = c.keyed("declared")?;
        match toks.as_slice() {
            [v] => c.parse(n, v)?,
            _ => return Err(format_err("task", n, "`declared` takes one value")),
        }
    };
    let mut idx = Vec::new();
    for key in ["f", "t", "uf", "r", "un"] {
        let (n, toks) = c.keyed(key)?;
        idx.push(c.parse_all::<usize>(n, &toks)?);
    }
    c.finish()?;

    let task = build_task(dataset, taxonomy, ScenarioSpec::new(d, m, t), &lists[0], &lists[1])
        .map_err(|e| Error::Format(format!("task does not fit the dataset: {e}")))?;
    if task.scenario.to_string() != scenario {
        return Err(format_err("task", n, format!("scenario `{scenario}` disagrees with levels ({})", task.scenario)));
    }
    let stored = [&idx[0], &idx[1], &idx[2], &idx[3], &idx[4]];
    let rebuilt = [&task.f_idx, &task.t_idx, &task.uf_idx, &task.r_idx, &task.un_idx];
    if declared != task.declared_unidentified_count || stored != rebuilt {
        return Err(Error::Format("task index lists do not match the dataset".into()));
    }
    Ok(task)
}

pub fn save_task(path: &Path, task: &UnlearnTask) -> LabResult<()> {
    write_text(path, &task_to_string(task))
}

pub fn load_task(path: &Path, dataset: &Dataset, taxonomy: &LabelTaxonomy) -> LabResult<UnlearnTask> {
    Ok(task_from_str(&read_text(path)?, dataset, taxonomy)?)
}
