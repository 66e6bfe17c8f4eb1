//! Ranking metrics for single-relevant-item retrieval, plus mean / sample
//! standard deviation aggregation across seeds.
//!
//! With exactly one relevant item per query at 1-based rank `r`:
//! Recall@k is the fraction of queries with `r <= k`, MRR is the mean of
//! `1 / r` (so `1 / MRR` is the harmonic mean of the ranks) and nDCG reduces
//! to the mean of `1 / log2(r + 1)`.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::retrieval::RankedResult;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no ranks to summarize")]
    Empty,
    #[error("ranks are 1-based; found 0 at position {0}")]
    ZeroRank(usize),
    #[error("label {0:?} is not in the ranked result")]
    LabelAbsent(String),
    #[error("Recall@k needs k >= 1")]
    ZeroK,
}

/// The rank of the correct label for each query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankList(Vec<usize>);

impl RankList {
    pub fn new(ranks: Vec<usize>) -> Result<Self, MetricsError> {
        if let Some(pos) = ranks.iter().position(|&r| r == 0) {
            return Err(MetricsError::ZeroRank(pos));
        }
        Ok(RankList(ranks))
    }

    pub fn ranks(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSet {
    pub recall: BTreeMap<usize, f64>,
    pub mrr: f64,
    pub ndcg: f64,
}

impl MetricSet {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.recall.get(&k).copied()
    }

    /// `(name, value)` pairs: `recall@k` in ascending `k`, then `mrr`, `ndcg`.
    pub fn named(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self.recall.iter().map(|(k, v)| (format!("recall@{k}"), *v)).collect();
        out.push(("mrr".into(), self.mrr));
        out.push(("ndcg".into(), self.ndcg));
        out
    }
}

/// 1-based position of `label` in a full ranking.
pub fn rank_of_correct(result: &RankedResult, label: &str) -> Result<usize, MetricsError> {
    result
        .entries
        .iter()
        .find(|e| e.label == label)
        .map(|e| e.rank)
        .ok_or_else(|| MetricsError::LabelAbsent(label.to_string()))
}

pub fn compute_metrics(ranks: &RankList, ks: &[usize]) -> Result<MetricSet, MetricsError> {
    if ranks.is_empty() {
        return Err(MetricsError::Empty);
    }
    if ks.contains(&0) {
        return Err(MetricsError::ZeroK);
    }
    let n = ranks.len() as f64;
    let recall = ks
        .iter()
        .map(|&k| (k, ranks.0.iter().filter(|&&r| r <= k).count() as f64 / n))
        .collect();
    let mrr = ranks.0.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    let ndcg = ranks.0.iter().map(|&r| 1.0 / ((r + 1) as f64).log2()).sum::<f64>() / n;
    Ok(MetricSet { recall, mrr, ndcg })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample (n - 1) standard deviation; `None` with a single value.
    pub std: Option<f64>,
    pub n: usize,
}

pub fn mean_std(values: &[f64]) -> Result<Aggregate, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = values.len();
    // identical values: the summed mean can be off by an ulp, which would
    // report a spurious non-zero spread
    if values.iter().all(|v| v.to_bits() == values[0].to_bits()) {
        return Ok(Aggregate { mean: values[0], std: (n >= 2).then_some(0.0), n });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n >= 2).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    Ok(Aggregate { mean, std, n })
}

/// Mean and sample standard deviation of every metric across per-seed results.
/// Metric names follow [`MetricSet::named`].
pub fn aggregate_mean_std(per_seed: &[MetricSet]) -> Result<Vec<(String, Aggregate)>, MetricsError> {
    let first = per_seed.first().ok_or(MetricsError::Empty)?;
    first
        .named()
        .iter()
        .enumerate()
        .map(|(i, (name, _))| {
            let values: Vec<f64> = per_seed.iter().map(|m| m.named()[i].1).collect();
            Ok((name.clone(), mean_std(&values)?))
        })
        .collect()
}
