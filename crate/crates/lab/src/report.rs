//! Report rows, their CSV and JSON forms, trace exports and mean/std
//! aggregation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use unlearn_core::dynamics::DynamicsTrace;
use unlearn_core::evalkit::MetricsReport;
use unlearn_core::taxonomy::LabelTaxonomy;

use crate::error::{LabError, LabResult};
use crate::formats::write_text;

/// Bumped whenever the column order below changes.
pub const REPORT_VERSION: u32 = 1;

pub const REPORT_COLUMNS: [&str; 11] = [
    "method", "scenario", "task", "seed", "ua", "ra", "ta", "ta_all", "mia", "gap", "rte_seconds",
];

/// One method on one task and seed. Percentages throughout, `gap` empty
/// when no retrained reference was available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub scenario: String,
    pub task: String,
    pub seed: u64,
    pub ua: f64,
    pub ra: f64,
    pub ta: f64,
    pub ta_all: f64,
    pub mia: f64,
    pub gap: Option<f64>,
    pub rte_seconds: f64,
}

impl ReportRow {
    pub fn new(report: &MetricsReport, seed: u64, gap: Option<f64>) -> Self {
        Self {
            method: report.method.clone(),
            scenario: report.scenario.clone(),
            task: report.task.clone(),
            seed,
            ua: report.ua,
            ra: report.ra,
            ta: report.ta,
            ta_all: report.ta_all,
            mia: report.mia,
            gap,
            rte_seconds: report.rte_seconds,
        }
    }
}

pub fn rows_to_csv(rows: &[ReportRow]) -> LabResult<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(REPORT_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| LabError::Usage(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn rows_from_csv(text: &str) -> LabResult<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != REPORT_COLUMNS {
        return Err(unlearn_core::Error::Format(format!("unexpected report columns {header:?}")).into());
    }
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[derive(Serialize, Deserialize)]
struct JsonReport {
    version: u32,
    rows: Vec<ReportRow>,
}

pub fn rows_to_json(rows: &[ReportRow]) -> LabResult<String> {
    Ok(serde_json::to_string_pretty(&JsonReport {
        version: REPORT_VERSION,
        rows: rows.to_vec(),
    })? + "\n")
}

pub fn rows_from_json(text: &str) -> LabResult<Vec<ReportRow>> {
    let doc: JsonReport = serde_json::from_str(text)?;
    if doc.version != REPORT_VERSION {
        return Err(unlearn_core::Error::Format(format!("report version {} is not supported", doc.version)).into());
    }
    Ok(doc.rows)
}

pub fn write_reports(csv_path: &Path, json_path: &Path, rows: &[ReportRow]) -> LabResult<()> {
    write_text(csv_path, &rows_to_csv(rows)?)?;
    write_text(json_path, &rows_to_json(rows)?)
}

/// `epoch,group,loss,accuracy`, one row per recorded epoch and group.
pub fn trace_to_csv(trace: &DynamicsTrace) -> LabResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "group", "loss", "accuracy"])?;
    for snap in trace.snapshots() {
        for (name, g) in trace.group_names().iter().zip(&snap.groups) {
            w.serialize((snap.epoch, name, g.loss, g.accuracy))?;
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| LabError::Usage(e.to_string()))?).expect("utf-8"))
}

/// `epoch,label,name,accuracy,drop`, where drop is measured against the
/// first recorded epoch.
pub fn drops_to_csv(trace: &DynamicsTrace, taxonomy: &LabelTaxonomy, data_level: unlearn_core::taxonomy::DomainLevel) -> LabResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "label", "name", "accuracy", "drop"])?;
    let names = taxonomy.names(data_level);
    if let Some(first) = trace.snapshots().first() {
        for snap in trace.snapshots() {
            for (label, (acc, base)) in snap.class_accuracy.iter().zip(&first.class_accuracy).enumerate() {
                w.serialize((snap.epoch, label, &names[label], acc, base - acc))?;
            }
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| LabError::Usage(e.to_string()))?).expect("utf-8"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation; a single value has zero spread.
pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MeanStd { mean, std }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub scenario: String,
    pub task: String,
    pub runs: usize,
    pub ua: MeanStd,
    pub ra: MeanStd,
    pub ta: MeanStd,
    pub mia: MeanStd,
    /// Absent when no row in the group had a gap.
    pub gap: Option<MeanStd>,
    pub rte_seconds: MeanStd,
}

/// Groups rows by (scenario, task, method) and summarises each column.
pub fn aggregate(rows: &[ReportRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String, String), Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.scenario.clone(), r.task.clone(), r.method.clone()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((scenario, task, method), g)| {
            let col = |f: fn(&ReportRow) -> f64| mean_std(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
            let gaps: Vec<f64> = g.iter().filter_map(|r| r.gap).collect();
            SummaryRow {
                method,
                scenario,
                task,
                runs: g.len(),
                ua: col(|r| r.ua),
                ra: col(|r| r.ra),
                ta: col(|r| r.ta),
                mia: col(|r| r.mia),
                gap: (!gaps.is_empty()).then(|| mean_std(&gaps)),
                rte_seconds: col(|r| r.rte_seconds),
            }
        })
        .collect()
}

pub fn summary_to_csv(rows: &[SummaryRow]) -> LabResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "method", "scenario", "task", "runs", "ua_mean", "ua_std", "ra_mean", "ra_std", "ta_mean", "ta_std",
        "mia_mean", "mia_std", "gap_mean", "gap_std", "rte_mean", "rte_std",
    ])?;
    let num = |v: f64| format!("{v:.2}");
    for r in rows {
        let (gm, gs) = r.gap.map_or((String::new(), String::new()), |g| (num(g.mean), num(g.std)));
        w.write_record([
            r.method.clone(),
            r.scenario.clone(),
            r.task.clone(),
            r.runs.to_string(),
            num(r.ua.mean),
            num(r.ua.std),
            num(r.ra.mean),
            num(r.ra.std),
            num(r.ta.mean),
            num(r.ta.std),
            num(r.mia.mean),
            num(r.mia.std),
            gm,
            gs,
            format!("{:.4}", r.rte_seconds.mean),
            format!("{:.4}", r.rte_seconds.std),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| LabError::Usage(e.to_string()))?).expect("utf-8"))
}
