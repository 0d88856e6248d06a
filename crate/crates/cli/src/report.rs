//! Report files: JSON, a wide CSV table and a long plot CSV.

use std::fs;
use std::path::Path;

use conceptgrid::eval::{FamilyReport, ModeReport, RouterMode};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Metric columns in table order.
pub const METRICS: [&str; 8] = ["mae", "ber", "wfm", "sm", "miou", "mdice", "giou", "ciou"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub family: String,
    pub n: usize,
    pub mae: f64,
    pub ber: f64,
    pub wfm: f64,
    pub sm: f64,
    pub miou: f64,
    pub mdice: f64,
    pub giou: f64,
    pub ciou: f64,
    pub routing_rate: f64,
    pub target_accuracy: f64,
}

impl Row {
    fn from_family(f: &FamilyReport) -> Self {
        let m = &f.metrics;
        Row {
            family: f.family.clone(),
            n: m.n,
            mae: m.mae,
            ber: m.ber,
            wfm: m.wfm,
            sm: m.sm,
            miou: m.miou,
            mdice: m.mdice,
            giou: m.giou,
            ciou: m.ciou,
            routing_rate: f.routing_rate,
            target_accuracy: f.target_accuracy,
        }
    }

    pub fn header() -> Vec<String> {
        let mut h = vec!["family".to_string(), "n".to_string()];
        h.extend(METRICS.iter().map(|s| s.to_string()));
        h.extend(["routing_rate".to_string(), "target_accuracy".to_string()]);
        h
    }

    pub fn record(&self) -> Vec<String> {
        let mut r = vec![self.family.clone(), self.n.to_string()];
        r.extend(METRICS.iter().chain(&["routing_rate", "target_accuracy"]).map(|c| self.metric(c).to_string()));
        r
    }

    pub fn metric(&self, name: &str) -> f64 {
        match name {
            "mae" => self.mae,
            "ber" => self.ber,
            "wfm" => self.wfm,
            "sm" => self.sm,
            "miou" => self.miou,
            "mdice" => self.mdice,
            "giou" => self.giou,
            "ciou" => self.ciou,
            "routing_rate" => self.routing_rate,
            "target_accuracy" => self.target_accuracy,
            other => panic!("unknown column {other}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSection {
    pub mode: RouterMode,
    pub overall: Row,
    pub families: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub checkpoint: String,
    pub dataset: String,
    pub episodes: usize,
    pub theta: f64,
    pub primary_mode: RouterMode,
    pub modes: Vec<ModeSection>,
}

impl EvalReport {
    pub fn new(checkpoint: &str, dataset: &str, episodes: usize, theta: f64, primary: RouterMode, modes: &[ModeReport]) -> Self {
        EvalReport {
            schema_version: REPORT_SCHEMA_VERSION,
            checkpoint: checkpoint.into(),
            dataset: dataset.into(),
            episodes,
            theta,
            primary_mode: primary,
            modes: modes
                .iter()
                .map(|m| ModeSection {
                    mode: m.mode,
                    overall: Row::from_family(&m.overall),
                    families: m.families.iter().map(Row::from_family).collect(),
                })
                .collect(),
        }
    }

    pub fn mode(&self, mode: RouterMode) -> Option<&ModeSection> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    /// Writes `report.json`, `report.csv` and `plot.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        write_json(&dir.join("report.json"), self)?;

        let path = dir.join("report.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(&path, e))?;
        let mut head = vec!["mode".to_string()];
        head.extend(Row::header());
        w.write_record(&head).map_err(|e| CliError::io(&path, e))?;
        for m in &self.modes {
            for r in m.families.iter().chain(std::iter::once(&m.overall)) {
                let mut rec = vec![m.mode.name().to_string()];
                rec.extend(r.record());
                w.write_record(&rec).map_err(|e| CliError::io(&path, e))?;
            }
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;

        let path = dir.join("plot.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(&path, e))?;
        w.write_record(["mode", "family", "metric", "value"]).map_err(|e| CliError::io(&path, e))?;
        for m in &self.modes {
            for r in m.families.iter().chain(std::iter::once(&m.overall)) {
                for c in METRICS.iter().chain(&["routing_rate", "target_accuracy"]) {
                    w.write_record([m.mode.name(), &r.family, c, &r.metric(c).to_string()])
                        .map_err(|e| CliError::io(&path, e))?;
                }
            }
        }
        w.flush().map_err(|e| CliError::io(&path, e))
    }
}

/// One setting of a sweep, scored under the configured router mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub label: String,
    pub mode: RouterMode,
    #[serde(flatten)]
    pub row: Row,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub axis: String,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        write_json(&dir.join(format!("sweep-{}.json", self.axis)), self)?;
        let path = dir.join(format!("sweep-{}.csv", self.axis));
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(&path, e))?;
        let mut head: Vec<String> = ["axis", "value", "label", "mode"].map(String::from).to_vec();
        head.extend(Row::header());
        w.write_record(&head).map_err(|e| CliError::io(&path, e))?;
        for r in &self.rows {
            let mut rec = vec![r.axis.clone(), r.value.clone(), r.label.clone(), r.mode.name().to_string()];
            rec.extend(r.row.record());
            w.write_record(&rec).map_err(|e| CliError::io(&path, e))?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}
