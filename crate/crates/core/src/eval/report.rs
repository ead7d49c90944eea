use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{auroc, pooled_stats, rate_at_operating_point, OperatingPoint, ScoreSet};
use crate::error::{ensure, Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const CSV_HEADER: [&str; 11] = [
    "config_hash",
    "monitor_id",
    "severity",
    "corruption_id",
    "auroc",
    "fpr_at_95tpr",
    "fnr_at_95tnr",
    "n_id",
    "n_ood",
    "zscore_mean",
    "zscore_std",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub monitor_id: String,
    pub severity: usize,
    /// Corruption id, or `mixed` for round-robin sets.
    pub corruption_id: String,
    pub auroc: f64,
    pub fpr_at_95tpr: f64,
    pub fnr_at_95tnr: f64,
    pub n_id: usize,
    pub n_ood: usize,
    /// Pooled statistics used for z-score normalization of this comparison.
    pub zscore_mean: f64,
    pub zscore_std: f64,
}

impl ReportRow {
    pub fn from_scores(monitor_id: &str, severity: usize, corruption_id: &str, s: &ScoreSet) -> Result<Self> {
        let (mean, std) = pooled_stats(s);
        Ok(Self {
            monitor_id: monitor_id.to_string(),
            severity,
            corruption_id: corruption_id.to_string(),
            auroc: auroc(s)?,
            fpr_at_95tpr: rate_at_operating_point(s, OperatingPoint::Tpr95)?,
            fnr_at_95tnr: rate_at_operating_point(s, OperatingPoint::Tnr95)?,
            n_id: s.id_scores.len(),
            n_ood: s.ood_scores.len(),
            zscore_mean: mean,
            zscore_std: std,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub schema_version: u32,
    pub config_hash: String,
    /// Seconds since the Unix epoch; not part of the CSV mirror.
    pub created_unix: u64,
    pub rows: Vec<ReportRow>,
}

impl BenchmarkReport {
    pub fn new(config_hash: impl Into<String>, rows: Vec<ReportRow>) -> Self {
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            config_hash: config_hash.into(),
            created_unix,
            rows,
        }
    }

    pub fn rows_for<'a>(&'a self, monitor_id: &'a str) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows.iter().filter(move |r| r.monitor_id == monitor_id)
    }

    /// AUROC of the row matching all three keys.
    pub fn auroc_of(&self, monitor_id: &str, corruption_id: &str, severity: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.monitor_id == monitor_id && r.corruption_id == corruption_id && r.severity == severity)
            .map(|r| r.auroc)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: Self =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        ensure!(
            report.schema_version == REPORT_SCHEMA_VERSION,
            Format,
            "{}: unsupported report schema {}",
            path.display(),
            report.schema_version
        );
        Ok(report)
    }

    /// Flat CSV with one line per row; the config hash is a leading column.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).map_err(|e| Error::Format(e.to_string()))?;
        for r in &self.rows {
            w.write_record([
                self.config_hash.clone(),
                r.monitor_id.clone(),
                r.severity.to_string(),
                r.corruption_id.clone(),
                r.auroc.to_string(),
                r.fpr_at_95tpr.to_string(),
                r.fnr_at_95tnr.to_string(),
                r.n_id.to_string(),
                r.n_ood.to_string(),
                r.zscore_mean.to_string(),
                r.zscore_std.to_string(),
            ])
            .map_err(|e| Error::Format(e.to_string()))?;
        }
        w.into_inner().map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}
