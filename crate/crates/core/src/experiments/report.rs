use std::path::Path;

use serde::Serialize;

use super::ExperimentError;
use crate::metrics::{aggregate_mean_std, MetricSet};

pub const METRICS_CSV_HEADER: &str = "dataset,seed,n_support,recall@1,recall@5,recall@10,mrr,ndcg";
pub const SUMMARY_CSV_HEADER: &str = "condition,metric,mean,std,n_seeds";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub condition: String,
    pub dataset: String,
    pub seed: u64,
    pub n_support: usize,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub condition: String,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation; `None` for a single seed.
    pub std: Option<f64>,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub summary: Vec<SummaryRow>,
    pub runtime_secs: f64,
}

impl PartialEq for ExperimentReport {
    /// Reports are equal when their results are; runtime is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows && self.summary == other.summary
    }
}

impl ExperimentReport {
    /// Aggregates rows per condition, conditions in order of first appearance.
    pub fn from_rows(rows: Vec<ReportRow>, runtime_secs: f64) -> Result<Self, ExperimentError> {
        let mut conditions: Vec<&str> = Vec::new();
        for r in &rows {
            if !conditions.contains(&r.condition.as_str()) {
                conditions.push(&r.condition);
            }
        }
        let mut summary = Vec::new();
        for condition in conditions {
            let sets: Vec<MetricSet> =
                rows.iter().filter(|r| r.condition == condition).map(|r| r.metrics.clone()).collect();
            for (metric, agg) in aggregate_mean_std(&sets)? {
                summary.push(SummaryRow {
                    condition: condition.to_string(),
                    metric,
                    mean: agg.mean,
                    std: agg.std,
                    n_seeds: agg.n,
                });
            }
        }
        Ok(ExperimentReport { rows, summary, runtime_secs })
    }

    pub fn summary_for(&self, condition: &str, metric: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.condition == condition && s.metric == metric)
    }

    pub fn rows_for<'a>(&'a self, condition: &'a str) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows.iter().filter(move |r| r.condition == condition)
    }

    /// One row per (dataset, seed); recall columns follow the evaluated `k`s.
    pub fn metrics_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let names: Vec<String> = match self.rows.first() {
            Some(r) => r.metrics.named().into_iter().map(|(n, _)| n).collect(),
            None => METRICS_CSV_HEADER.split(',').skip(3).map(String::from).collect(),
        };
        let mut header = vec!["dataset".to_string(), "seed".into(), "n_support".into()];
        header.extend(names);
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let mut rec = vec![r.dataset.clone(), r.seed.to_string(), r.n_support.to_string()];
            rec.extend(r.metrics.named().into_iter().map(|(_, v)| v.to_string()));
            w.write_record(&rec).expect("in-memory write");
        }
        into_string(w)
    }

    pub fn summary_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(SUMMARY_CSV_HEADER.split(',')).expect("in-memory write");
        for s in &self.summary {
            w.write_record([
                s.condition.clone(),
                s.metric.clone(),
                s.mean.to_string(),
                s.std.map_or(String::new(), |v| v.to_string()),
                s.n_seeds.to_string(),
            ])
            .expect("in-memory write");
        }
        into_string(w)
    }

    /// Writes `metrics.csv` and `summary.csv` into `dir`.
    pub fn write_csv(&self, dir: impl AsRef<Path>) -> Result<(), ExperimentError> {
        let dir = dir.as_ref();
        let io = |e: std::io::Error| ExperimentError::Output(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(dir.join("metrics.csv"), self.metrics_csv()).map_err(io)?;
        std::fs::write(dir.join("summary.csv"), self.summary_csv()).map_err(io)?;
        Ok(())
    }
}

fn into_string(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv of UTF-8 fields")
}
