//! Metric reports (JSON + CSV) and the CSV logs written by each command.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mkmed_core::align::PretrainReport;
use mkmed_core::eval::{MetricValues, MetricsReport};
use mkmed_core::pipeline::EpochLog;

use crate::error::{CliError, CliResult};
use crate::formats::write_json;

pub const REPORT_VERSION: u32 = 1;
pub const SELECTION: &str = "best validation jaccard";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub report_version: u32,
    pub config_hash: String,
    pub model_selection: String,
    pub seed: u64,
    pub bootstrap: usize,
    pub ddi_mode: String,
    pub delta: f64,
    pub test_patients: usize,
    pub metrics: Vec<(String, MeanStd)>,
}

impl MetricReport {
    pub fn new(r: &MetricsReport, config_hash: String, seed: u64, ddi_mode: &str, delta: f64, test_patients: usize) -> Self {
        let (m, s) = (r.mean.as_array(), r.std.as_array());
        MetricReport {
            report_version: REPORT_VERSION,
            config_hash,
            model_selection: SELECTION.to_string(),
            seed,
            bootstrap: r.samples.len(),
            ddi_mode: ddi_mode.to_string(),
            delta,
            test_patients,
            metrics: MetricValues::NAMES.iter().enumerate().map(|(i, n)| (n.to_string(), MeanStd { mean: m[i], std: s[i] })).collect(),
        }
    }

    pub fn get(&self, metric: &str) -> Option<MeanStd> {
        self.metrics.iter().find(|(n, _)| n == metric).map(|&(_, v)| v)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let metrics: serde_json::Map<String, serde_json::Value> =
            self.metrics.iter().map(|(n, v)| (n.clone(), serde_json::json!({"mean": v.mean, "std": v.std}))).collect();
        serde_json::json!({
            "report_version": self.report_version,
            "config_hash": self.config_hash,
            "model_selection": self.model_selection,
            "seed": self.seed,
            "bootstrap": self.bootstrap,
            "ddi_mode": self.ddi_mode,
            "delta": self.delta,
            "test_patients": self.test_patients,
            "metrics": metrics,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("report_version,config_hash,metric,mean,std\n");
        for (n, v) in &self.metrics {
            writeln!(s, "{},{},{n},{},{}", self.report_version, self.config_hash, v.mean, v.std).expect("string write");
        }
        s
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        write_json(&dir.join("report.json"), &self.to_json())?;
        write_text(&dir.join("report.csv"), &self.to_csv())
    }
}

pub fn write_text(path: &Path, s: &str) -> CliResult<()> {
    fs::write(path, s).map_err(CliError::io(path))
}

pub fn pretrain_loss_csv(r: Option<&PretrainReport>) -> String {
    let mut s = String::from("epoch,loss\n");
    for (e, l) in r.map(|r| r.losses.as_slice()).unwrap_or_default().iter().enumerate() {
        writeln!(s, "{e},{l}").expect("string write");
    }
    s
}

pub fn training_log_csv(log: &[EpochLog], best_epoch: usize) -> String {
    let mut s = String::from("epoch,train_loss,val_jaccard,val_ddi,beta,selected\n");
    for e in log {
        writeln!(s, "{},{},{},{},{},{}", e.epoch, e.train_loss, e.val_jaccard, e.val_ddi, e.beta, u8::from(e.epoch == best_epoch))
            .expect("string write");
    }
    s
}

/// Long-format experiment table: one row per configuration, metric and
/// seed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentTable {
    rows: Vec<ExperimentRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub experiment: String,
    pub configuration: String,
    pub seed: u64,
    pub config_hash: String,
    pub metric: String,
    /// `None` renders as an empty cell (e.g. an empty intersection).
    pub value: Option<f64>,
}

impl ExperimentTable {
    pub fn push(&mut self, row: ExperimentRow) {
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[ExperimentRow] {
        &self.rows
    }

    pub fn extend(&mut self, other: ExperimentTable) {
        self.rows.extend(other.rows);
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("experiment,configuration,seed,config_hash,metric,value\n");
        for r in &self.rows {
            let v = r.value.map(|v| v.to_string()).unwrap_or_default();
            writeln!(s, "{},{},{},{},{},{v}", r.experiment, r.configuration, r.seed, r.config_hash, r.metric).expect("string write");
        }
        s
    }
}
