use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use crate::error::{Error, Result};
use crate::teacher::EpochLog;

pub const CSV_HEADER: &str = "seed,method,pca_dim,degree,dict_size,accuracy,epochs,wall_ms";

/// One (seed, method) cell of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub method: Method,
    /// Dimension of the lifted state: PCA dimension, first hidden width for
    /// `naive`, 0 for `teacher`.
    pub pca_dim: usize,
    pub degree: usize,
    pub dict_size: usize,
    /// Test accuracy as a fraction; `None` when the run failed.
    pub accuracy: Option<f64>,
    pub epochs: usize,
    pub wall_ms: u128,
    pub epoch_log: Vec<EpochLog>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    /// `None` when every seed failed.
    pub mean: Option<f64>,
    /// Population standard deviation.
    pub std: Option<f64>,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub records: Vec<RunRecord>,
    pub summary: Vec<MethodSummary>,
    /// Cumulative explained variance ratio of the fitted PCA components.
    #[serde(default)]
    pub pca_explained: Option<f64>,
    /// Some run failed; summaries cover successful seeds only.
    pub partial: bool,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn population_std(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

impl ExperimentReport {
    pub fn new(config: ExperimentConfig, records: Vec<RunRecord>) -> Self {
        let mut by_method: BTreeMap<Method, Vec<&RunRecord>> = BTreeMap::new();
        for r in &records {
            by_method.entry(r.method).or_default().push(r);
        }
        let summary = by_method
            .into_iter()
            .map(|(method, rs)| {
                let ok: Vec<&RunRecord> = rs.iter().copied().filter(|r| r.accuracy.is_some()).collect();
                let accuracies: Vec<f64> = ok.iter().filter_map(|r| r.accuracy).collect();
                let (mean, std) = if accuracies.is_empty() {
                    (None, None)
                } else {
                    (Some(mean(&accuracies)), Some(population_std(&accuracies)))
                };
                MethodSummary {
                    method,
                    seeds: ok.iter().map(|r| r.seed).collect(),
                    accuracies,
                    mean,
                    std,
                    failed: rs.len() - ok.len(),
                }
            })
            .collect();
        let partial = records.iter().any(|r| r.error.is_some());
        ExperimentReport {
            config,
            records,
            summary,
            pca_explained: None,
            partial,
        }
    }

    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    pub fn accuracy(&self, seed: u64, method: Method) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.seed == seed && r.method == method)
            .and_then(|r| r.accuracy)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let acc = r.accuracy.map(|a| a.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.seed, r.method, r.pca_dim, r.degree, r.dict_size, acc, r.epochs, r.wall_ms
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        create_parent(path)?;
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        create_parent(path)?;
        let bytes = serde_json::to_vec_pretty(self)?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

/// Drops the `wall_ms` column so two reports can be compared byte for byte.
pub fn strip_wall_clock(csv: &str) -> String {
    csv.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}
