use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::experiment::{per_subset_csv, ExperimentReport, Summary};
use crate::error::{Error, Result};

/// Environment variable that overrides the default run root `runs`.
pub const RUN_ROOT_ENV: &str = "FSNIDS_RUN_ROOT";

pub fn run_root() -> PathBuf {
    std::env::var_os(RUN_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Writes `<hash>.json` and `<hash>.csv` per report into `dir`.
pub fn write_reports(dir: &Path, reports: &[ExperimentReport]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for r in reports {
        let json = dir.join(format!("{}.json", r.config_hash));
        std::fs::write(&json, r.to_json()?).map_err(|e| Error::io(&json, e))?;
        let csv = dir.join(format!("{}.csv", r.config_hash));
        std::fs::write(&csv, per_subset_csv(r)).map_err(|e| Error::io(&csv, e))?;
        written.push(json);
    }
    Ok(written)
}

/// Every experiment report in `dir`, in file-name order. Other JSON files
/// are skipped.
pub fn load_reports(dir: &Path) -> Result<Vec<ExperimentReport>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        if let Ok(r) = serde_json::from_str::<ExperimentReport>(&text) {
            out.push(r);
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!("no experiment reports in {}", dir.display())));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model: String,
    pub n_benign: usize,
    pub n_per_attack: usize,
    pub n_subsets: usize,
    pub summary: Summary,
}

/// One row per (model, subset size), sorted by attack count then model.
pub fn aggregate(reports: &[ExperimentReport]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(usize, String, usize), Vec<_>> = BTreeMap::new();
    for r in reports {
        for size in &r.results {
            groups
                .entry((size.n_per_attack, r.model.clone(), size.n_benign))
                .or_default()
                .extend(size.subsets.iter().cloned());
        }
    }
    groups
        .into_iter()
        .map(|((n_per_attack, model, n_benign), subsets)| AggregateRow {
            model,
            n_benign,
            n_per_attack,
            n_subsets: subsets.len(),
            summary: Summary::of(&subsets),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::Config(format!("unknown report format `{s}`"))),
        }
    }
}

const METRICS: [&str; 6] = [
    "macro_f1",
    "macro_recall",
    "macro_precision",
    "fp_rate",
    "train_macro_f1",
    "generalization_gap",
];

fn metric_values(s: &Summary) -> [super::experiment::MeanStd; 6] {
    [
        s.macro_f1,
        s.macro_recall,
        s.macro_precision,
        s.fp_rate,
        s.train_macro_f1,
        s.generalization_gap,
    ]
}

pub fn render(rows: &[AggregateRow], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(rows)? + "\n"),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["model".to_string(), "n_benign".into(), "n_per_attack".into(), "n_subsets".into()];
            for m in METRICS {
                header.push(format!("{m}_mean"));
                header.push(format!("{m}_std"));
            }
            w.write_record(&header)?;
            for r in rows {
                let mut rec = vec![
                    r.model.clone(),
                    r.n_benign.to_string(),
                    r.n_per_attack.to_string(),
                    r.n_subsets.to_string(),
                ];
                for v in metric_values(&r.summary) {
                    rec.push(v.mean.to_string());
                    rec.push(v.std.to_string());
                }
                w.write_record(&rec)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        ReportFormat::Table => {
            let width = rows.iter().map(|r| r.model.len()).max().unwrap_or(0).max(5);
            let mut out = String::new();
            let _ = writeln!(
                out,
                "{:<width$}  {:>6}  {:>5}  {:>3}  {:>15}  {:>15}  {:>15}  {:>15}  {:>15}",
                "model", "N_B", "N_M", "n", "macro F1", "recall", "precision", "FP rate", "gap"
            );
            for r in rows {
                let s = &r.summary;
                let cell = |m: super::experiment::MeanStd| format!("{:.4} ± {:.4}", m.mean, m.std);
                let _ = writeln!(
                    out,
                    "{:<width$}  {:>6}  {:>5}  {:>3}  {:>15}  {:>15}  {:>15}  {:>15}  {:>15}",
                    r.model,
                    r.n_benign,
                    r.n_per_attack,
                    r.n_subsets,
                    cell(s.macro_f1),
                    cell(s.macro_recall),
                    cell(s.macro_precision),
                    cell(s.fp_rate),
                    cell(s.generalization_gap),
                );
            }
            Ok(out)
        }
    }
}
