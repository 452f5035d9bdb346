//! Experiment records, CSV serialization and multi-seed statistics.

mod chart;

pub use chart::{render_chart, ChartSeries};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cli::ExperimentConfig;
use crate::error::{Error, Result};
use crate::partitioning::SkewnessReport;

pub const ROUND_CSV_HEADER: &str = "round,val_accuracy,val_loss,mean_train_loss";
pub const SUMMARY_CSV_HEADER: &str =
    "dataset,algorithm,partitioning,areas,devices,test_acc_mean,test_acc_std";

/// Validation metrics after one aggregation round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub mean_train_loss: f64,
}

/// Full trajectory of one seed: per-round curve plus final test metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub rounds: Vec<RoundRecord>,
    pub final_test_accuracy: f64,
    pub final_test_loss: f64,
    pub skewness: SkewnessReport,
}

/// Everything one experiment produced, with the resolved config embedded so
/// results stay interpretable on their own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub seed_runs: Vec<SeedRun>,
    pub test_acc_mean: f64,
    pub test_acc_std: f64,
}

impl ExperimentReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_vec_pretty(self)?;
        std::fs::write(path, body)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Checks that the stored mean and std match the per-seed accuracies.
    pub fn check_consistent(&self) -> Result<()> {
        let finals: Vec<f64> = self.seed_runs.iter().map(|r| r.final_test_accuracy).collect();
        let (mean, std) = aggregate_seeds(&finals)?;
        if (mean - self.test_acc_mean).abs() > 1e-12 || (std - self.test_acc_std).abs() > 1e-12 {
            return Err(Error::DimensionMismatch(format!(
                "report stats ({}, {}) disagree with recomputed ({mean}, {std})",
                self.test_acc_mean, self.test_acc_std
            )));
        }
        Ok(())
    }
}

/// One row of the summary CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub algorithm: String,
    pub partitioning: String,
    pub areas: usize,
    pub devices: usize,
    pub test_acc_mean: f64,
    pub test_acc_std: f64,
}

impl SummaryRow {
    pub fn from_report(report: &ExperimentReport) -> Self {
        Self {
            dataset: report.config.dataset.name().to_string(),
            algorithm: report.config.algorithm.name().to_string(),
            partitioning: report.config.method.name().to_string(),
            areas: report.config.areas,
            devices: report.config.devices,
            test_acc_mean: report.test_acc_mean,
            test_acc_std: report.test_acc_std,
        }
    }

    /// Identity of the configuration this row describes.
    pub fn key(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.dataset, self.algorithm, self.partitioning, self.areas, self.devices
        )
    }
}

/// Mean and population standard deviation of per-seed final accuracies.
pub fn aggregate_seeds(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::NoReports);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Writes the per-round CSV: fixed header, six decimal places.
pub fn write_round_csv(records: &[RoundRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    let mut body = String::from(ROUND_CSV_HEADER);
    body.push('\n');
    for r in records {
        body.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            r.round, r.val_accuracy, r.val_loss, r.mean_train_loss
        ));
    }
    std::fs::write(path, body).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn parse_f64(field: &str, path: &Path, line: usize) -> Result<f64> {
    field.parse().map_err(|_| Error::MalformedCsv {
        path: path.to_path_buf(),
        reason: format!("line {line}: `{field}` is not a number"),
    })
}

pub fn read_round_csv(path: &Path) -> Result<Vec<RoundRecord>> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut lines = body.lines();
    match lines.next() {
        Some(h) if h == ROUND_CSV_HEADER => {}
        other => {
            return Err(Error::MalformedCsv {
                path: path.to_path_buf(),
                reason: format!("bad header {other:?}"),
            })
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::MalformedCsv {
                path: path.to_path_buf(),
                reason: format!("line {}: expected 4 fields, got {}", i + 2, fields.len()),
            });
        }
        records.push(RoundRecord {
            round: fields[0].parse().map_err(|_| Error::MalformedCsv {
                path: path.to_path_buf(),
                reason: format!("line {}: `{}` is not a round number", i + 2, fields[0]),
            })?,
            val_accuracy: parse_f64(fields[1], path, i + 2)?,
            val_loss: parse_f64(fields[2], path, i + 2)?,
            mean_train_loss: parse_f64(fields[3], path, i + 2)?,
        });
    }
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    Ok(records)
}

/// Writes the cross-experiment summary CSV.
pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::NoReports);
    }
    let mut body = String::from(SUMMARY_CSV_HEADER);
    body.push('\n');
    for r in rows {
        body.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6}\n",
            r.dataset, r.algorithm, r.partitioning, r.areas, r.devices, r.test_acc_mean,
            r.test_acc_std
        ));
    }
    std::fs::write(path, body).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut lines = body.lines();
    match lines.next() {
        Some(h) if h == SUMMARY_CSV_HEADER => {}
        other => {
            return Err(Error::MalformedCsv {
                path: path.to_path_buf(),
                reason: format!("bad header {other:?}"),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::MalformedCsv {
                path: path.to_path_buf(),
                reason: format!("line {}: expected 7 fields, got {}", i + 2, fields.len()),
            });
        }
        let parse_usize = |f: &str| -> Result<usize> {
            f.parse().map_err(|_| Error::MalformedCsv {
                path: path.to_path_buf(),
                reason: format!("line {}: `{f}` is not a count", i + 2),
            })
        };
        rows.push(SummaryRow {
            dataset: fields[0].to_string(),
            algorithm: fields[1].to_string(),
            partitioning: fields[2].to_string(),
            areas: parse_usize(fields[3])?,
            devices: parse_usize(fields[4])?,
            test_acc_mean: parse_f64(fields[5], path, i + 2)?,
            test_acc_std: parse_f64(fields[6], path, i + 2)?,
        });
    }
    if rows.is_empty() {
        return Err(Error::NoReports);
    }
    Ok(rows)
}
