//! Metrics reports, CSV tables and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

/// Version string recorded in every manifest.
pub const VERSION: &str = concat!("rubikpp-v", env!("CARGO_PKG_VERSION"));

/// Tabular record of one stage. The first column of `rows` is the step (or
/// the cell key for sweeps). Wall-clock time lives in the manifest so that
/// reports of identical runs are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub stage: String,
    pub seed: u64,
    pub config_digest: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub final_mse: Option<f64>,
    pub identity_mse: Option<f64>,
    pub per_class_dice: Vec<f64>,
    pub mean_dice: Option<f64>,
    #[serde(skip)]
    pub wall_clock_s: f64,
}

impl MetricsReport {
    pub fn new(stage: &str, cfg: &ExperimentConfig, columns: &[&str]) -> Self {
        MetricsReport {
            stage: stage.to_string(),
            seed: cfg.seed,
            config_digest: cfg.digest(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            final_mse: None,
            identity_mse: None,
            per_class_dice: Vec::new(),
            mean_dice: None,
            wall_clock_s: 0.0,
        }
    }

    /// Values of one column.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// SHA-256 over the little-endian bytes of every row value.
    pub fn rows_digest(&self) -> String {
        let mut h = Sha256::new();
        for v in self.rows.iter().flatten() {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::BadConfig(format!("report: {e}")))
    }
}

/// Write a header row and one line per row.
pub fn write_csv(path: &Path, columns: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Write(e),
        other => Error::Write(std::io::Error::other(format!("{other:?}"))),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(columns).map_err(io)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(io)?;
    }
    w.flush().map_err(Error::Write)
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    stage: &'a str,
    version: &'a str,
    seed: u64,
    config_digest: String,
    config: &'a ExperimentConfig,
    wall_clock_s: f64,
    outputs: Vec<String>,
}

/// Write `<stage>.csv`, `<stage>.json` and `<stage>.manifest.json` under
/// `dir`, plus any `extra` output names the manifest should list. Returns
/// the path of the JSON report.
pub fn emit(report: &MetricsReport, cfg: &ExperimentConfig, dir: &Path, extra: &[&Path]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(Error::Write)?;
    let stage = &report.stage;
    let csv_path = dir.join(format!("{stage}.csv"));
    let json_path = dir.join(format!("{stage}.json"));
    write_csv(&csv_path, &report.columns, &report.rows)?;
    fs::write(&json_path, report.to_json()).map_err(Error::Write)?;
    let mut outputs = vec![csv_path.display().to_string(), json_path.display().to_string()];
    outputs.extend(extra.iter().map(|p| p.display().to_string()));
    let manifest = Manifest {
        stage,
        version: VERSION,
        seed: cfg.seed,
        config_digest: cfg.digest(),
        config: cfg,
        wall_clock_s: report.wall_clock_s,
        outputs,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    fs::write(dir.join(format!("{stage}.manifest.json")), text).map_err(Error::Write)?;
    Ok(json_path)
}
