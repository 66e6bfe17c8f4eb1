//! Synthetic data and the one-shot evaluation protocols.
//!
//! * [`run_perturbation`] resamples which exemplar represents each class in
//!   the support set, once per seed, and reports the spread of the metrics.
//! * [`run_scaling`] grows a nested dictionary while keeping the queries
//!   fixed to the classes of the smallest one, so every added class is a pure
//!   distractor and metrics can only stay equal or drop.
//!
//! The model is frozen during both, so every sample is embedded exactly once
//! and supports are assembled from cached embeddings.

mod report;
mod synth;

pub use report::{ExperimentReport, ReportRow, SummaryRow, METRICS_CSV_HEADER, SUMMARY_CSV_HEADER};
pub use synth::{class_label, synth_generate, synth_prototypes, SynthConfig};

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::Dataset;
use crate::keypoints::{normalize, to_model_input};
use crate::metrics::{compute_metrics, rank_of_correct, MetricSet, MetricsError, RankList};
use crate::poseformer::{
    mix_seed, train, Ablation, EmbeddingVector, ModelConfig, ModelError, PoseFormerModel, TrainConfig,
    TrainOutcome, TrainingExample,
};
use crate::retrieval::{RetrievalError, Similarity, SupportOptions, SupportSet};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("need at least 2 classes to split, found {0}")]
    TooFewClasses(usize),
    #[error("split fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("class {0:?} has no support candidate")]
    NoCandidates(String),
    #[error("class {0:?} has no query left after support selection")]
    NoQueries(String),
    #[error("query label {0:?} has no support candidates")]
    UnknownQueryLabel(String),
    #[error("dictionary size {size} exceeds the {classes} available classes")]
    SizeExceedsClasses { size: usize, classes: usize },
    #[error("dictionary sizes must be positive and strictly increasing")]
    SizesNotIncreasing,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("{label:?}: {source}")]
    Sample { label: String, source: ModelError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("report output: {0}")]
    Output(String),
}

/// Splits classes (not samples) into a pretraining and a one-shot side:
/// `round(fraction * classes)` seeded-shuffled classes go to pretraining.
/// Item order within each side follows the input.
pub fn split_disjoint_classes(
    dataset: &Dataset,
    pretrain_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), ExperimentError> {
    if !(pretrain_fraction > 0.0 && pretrain_fraction < 1.0) {
        return Err(ExperimentError::InvalidFraction(pretrain_fraction));
    }
    let mut labels = dataset.labels();
    if labels.len() < 2 {
        return Err(ExperimentError::TooFewClasses(labels.len()));
    }
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x73706c6974])));
    let n_pre = ((pretrain_fraction * labels.len() as f64).round() as usize).clamp(1, labels.len() - 1);
    let pre: std::collections::HashSet<&str> = labels[..n_pre].iter().map(String::as_str).collect();
    Ok((dataset.filter_labels(|l| pre.contains(l)), dataset.filter_labels(|l| !pre.contains(l))))
}

/// Sorted class labels and preprocessed training examples for `dataset`.
pub fn training_examples(
    dataset: &Dataset,
    sequence_len: usize,
) -> Result<(Vec<String>, Vec<TrainingExample>), ExperimentError> {
    if dataset.is_empty() {
        return Err(ExperimentError::EmptyDataset);
    }
    let labels = dataset.labels();
    let index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let examples = dataset
        .items
        .par_iter()
        .map(|item| {
            let seq = normalize(&item.sequence)
                .map_err(|e| ExperimentError::Sample { label: item.label.clone(), source: e.into() })?;
            Ok(TrainingExample { input: to_model_input(&seq, sequence_len), class: index[item.label.as_str()] })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    Ok((labels, examples))
}

/// Builds a model for `dataset`'s classes (overriding `config.num_classes`),
/// trains it and records the class labels.
pub fn pretrain(
    dataset: &Dataset,
    mut config: ModelConfig,
    tcfg: &TrainConfig,
    model_seed: u64,
) -> Result<(PoseFormerModel, TrainOutcome), ExperimentError> {
    let (labels, examples) = training_examples(dataset, config.sequence_len)?;
    config.num_classes = labels.len();
    let mut model = PoseFormerModel::build(config, model_seed)?;
    let outcome = train(&mut model, &examples, tcfg)?;
    model.set_class_labels(labels)?;
    Ok((model, outcome))
}

/// Support candidates and held-out queries of the one-shot classes.
#[derive(Debug, Clone)]
pub struct OneShotPool {
    /// Candidate exemplars per class, labels sorted.
    pub candidates: BTreeMap<String, Dataset>,
    pub queries: Dataset,
}

impl OneShotPool {
    /// Explicit candidate and query sets. Every candidate class needs at least
    /// one query and every query label needs candidates.
    pub fn new(candidates: &Dataset, queries: Dataset) -> Result<Self, ExperimentError> {
        let mut by_class: BTreeMap<String, Dataset> = BTreeMap::new();
        for item in &candidates.items {
            by_class.entry(item.label.clone()).or_default().items.push(item.clone());
        }
        if by_class.is_empty() {
            return Err(ExperimentError::EmptyDataset);
        }
        let query_labels = queries.by_label();
        if let Some(label) = query_labels.keys().find(|l| !by_class.contains_key(*l)) {
            return Err(ExperimentError::UnknownQueryLabel(label.clone()));
        }
        if let Some(label) = by_class.keys().find(|l| !query_labels.contains_key(*l)) {
            return Err(ExperimentError::NoQueries(label.clone()));
        }
        Ok(OneShotPool { candidates: by_class, queries })
    }

    /// Per class, the first `candidates_per_class` samples (dataset order)
    /// become support candidates and the rest queries.
    pub fn split(dataset: &Dataset, candidates_per_class: usize) -> Result<Self, ExperimentError> {
        if candidates_per_class == 0 {
            return Err(ExperimentError::InvalidConfig("candidates_per_class must be positive".into()));
        }
        let mut candidates = Dataset::default();
        let mut queries = Dataset::default();
        for (label, idx) in dataset.by_label() {
            if idx.len() <= candidates_per_class {
                return Err(ExperimentError::NoQueries(label));
            }
            candidates.items.extend(idx[..candidates_per_class].iter().map(|&i| dataset.items[i].clone()));
            queries.items.extend(idx[candidates_per_class..].iter().map(|&i| dataset.items[i].clone()));
        }
        Self::new(&candidates, queries)
    }

    pub fn num_classes(&self) -> usize {
        self.candidates.len()
    }

    /// Embeds every candidate and query once.
    pub fn embed(&self, model: &PoseFormerModel) -> Result<EmbeddedPool, ExperimentError> {
        let embed_all = |d: &Dataset| -> Result<Vec<EmbeddingVector>, ExperimentError> {
            d.items
                .par_iter()
                .map(|it| {
                    model.embed(&it.sequence).map_err(|source| ExperimentError::Sample { label: it.label.clone(), source })
                })
                .collect()
        };
        let labels: Vec<String> = self.candidates.keys().cloned().collect();
        let index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let candidates = self.candidates.values().map(embed_all).collect::<Result<Vec<_>, _>>()?;
        let query_embeddings = embed_all(&self.queries)?;
        let queries = self.queries.items.iter().map(|it| index[it.label.as_str()]).zip(query_embeddings).collect();
        Ok(EmbeddedPool { labels, candidates, queries, fingerprint: model.fingerprint() })
    }
}

/// A [`OneShotPool`] after embedding with a frozen model.
#[derive(Debug, Clone)]
pub struct EmbeddedPool {
    pub labels: Vec<String>,
    pub candidates: Vec<Vec<EmbeddingVector>>,
    /// `(class index, embedding)`
    pub queries: Vec<(usize, EmbeddingVector)>,
    pub fingerprint: [u8; 32],
}

impl EmbeddedPool {
    /// Support set of `classes` (in that order) using candidate `choice[i]` for `classes[i]`.
    fn support(&self, classes: &[usize], choice: &[usize], options: SupportOptions) -> Result<SupportSet, ExperimentError> {
        let entries = classes
            .iter()
            .zip(choice)
            .map(|(&c, &j)| (self.labels[c].clone(), self.candidates[c][j].clone()))
            .collect();
        Ok(SupportSet::new(entries, self.fingerprint, options)?)
    }

    /// Metrics of the queries whose class is in `query_classes` against `support`.
    fn evaluate(
        &self,
        support: &SupportSet,
        query_classes: &[bool],
        ks: &[usize],
    ) -> Result<MetricSet, ExperimentError> {
        let ranks = self
            .queries
            .par_iter()
            .filter(|(c, _)| query_classes[*c])
            .map(|(c, q)| {
                let ranked = support.rank(q, None)?;
                Ok(rank_of_correct(&ranked, &self.labels[*c])?)
            })
            .collect::<Result<Vec<usize>, ExperimentError>>()?;
        Ok(compute_metrics(&RankList::new(ranks)?, ks)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolOptions {
    /// Name written to the `dataset` column of reports.
    pub dataset: String,
    pub seed: u64,
    pub ks: Vec<usize>,
    pub similarity: Similarity,
    pub temperature: f32,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        ProtocolOptions {
            dataset: "synthetic".into(),
            seed: 0,
            ks: vec![1, 5, 10],
            similarity: Similarity::ScaledDot,
            temperature: 1.0,
        }
    }
}

impl ProtocolOptions {
    fn support_options(&self) -> SupportOptions {
        SupportOptions { similarity: self.similarity, temperature: self.temperature }
    }
}

/// Support-set perturbation: for seeds `opts.seed .. opts.seed + n_seeds`,
/// pick one candidate per class uniformly at random, evaluate every query
/// and aggregate mean and sample standard deviation across seeds.
pub fn run_perturbation(
    pool: &OneShotPool,
    model: &PoseFormerModel,
    n_seeds: usize,
    opts: &ProtocolOptions,
) -> Result<ExperimentReport, ExperimentError> {
    let started = Instant::now();
    let embedded = pool.embed(model)?;
    let mut report = perturbation_from_embeddings(&embedded, n_seeds, opts)?;
    report.runtime_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

/// [`run_perturbation`] on already embedded candidates and queries.
pub fn perturbation_from_embeddings(
    pool: &EmbeddedPool,
    n_seeds: usize,
    opts: &ProtocolOptions,
) -> Result<ExperimentReport, ExperimentError> {
    if n_seeds == 0 {
        return Err(ExperimentError::InvalidConfig("n_seeds must be positive".into()));
    }
    let started = Instant::now();
    let classes: Vec<usize> = (0..pool.labels.len()).collect();
    let all = vec![true; classes.len()];
    let rows = (0..n_seeds as u64)
        .into_par_iter()
        .map(|i| {
            let seed = opts.seed + i;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x7065_7274]));
            let choice: Vec<usize> = pool.candidates.iter().map(|c| rng.random_range(0..c.len())).collect();
            let support = pool.support(&classes, &choice, opts.support_options())?;
            let metrics = pool.evaluate(&support, &all, &opts.ks)?;
            Ok(ReportRow {
                condition: "perturbation".into(),
                dataset: opts.dataset.clone(),
                seed,
                n_support: classes.len(),
                metrics,
            })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    ExperimentReport::from_rows(rows, started.elapsed().as_secs_f64())
}

/// Dictionary-size scaling over nested class sets. Classes enter in a
/// seeded order; each keeps one seeded exemplar at every size; queries are
/// those of the `sizes[0]` smallest dictionary's classes.
pub fn run_scaling(
    pool: &OneShotPool,
    model: &PoseFormerModel,
    sizes: &[usize],
    opts: &ProtocolOptions,
) -> Result<ExperimentReport, ExperimentError> {
    let started = Instant::now();
    let embedded = pool.embed(model)?;
    let mut report = scaling_from_embeddings(&embedded, sizes, opts)?;
    report.runtime_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

/// [`run_scaling`] on already embedded candidates and queries.
pub fn scaling_from_embeddings(
    pool: &EmbeddedPool,
    sizes: &[usize],
    opts: &ProtocolOptions,
) -> Result<ExperimentReport, ExperimentError> {
    let started = Instant::now();
    let n = pool.labels.len();
    if sizes.is_empty() || sizes[0] == 0 || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ExperimentError::SizesNotIncreasing);
    }
    let largest = *sizes.last().expect("non-empty");
    if largest > n {
        return Err(ExperimentError::SizeExceedsClasses { size: largest, classes: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[opts.seed, 0x0073_6361_6c65]));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let choice: Vec<usize> = order.iter().map(|&c| rng.random_range(0..pool.candidates[c].len())).collect();
    let mut query_classes = vec![false; n];
    for &c in &order[..sizes[0]] {
        query_classes[c] = true;
    }
    let rows = sizes
        .iter()
        .map(|&size| {
            let support = pool.support(&order[..size], &choice[..size], opts.support_options())?;
            Ok(ReportRow {
                condition: format!("n_support={size}"),
                dataset: opts.dataset.clone(),
                seed: opts.seed,
                n_support: size,
                metrics: pool.evaluate(&support, &query_classes, &opts.ks)?,
            })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    ExperimentReport::from_rows(rows, started.elapsed().as_secs_f64())
}

/// Trains the full model and each single-block ablation on `pretrain_set`,
/// then runs the perturbation protocol on `pool` for each. Rows carry the
/// variant as their condition and `<dataset>:<variant>` in the dataset column.
pub fn run_ablation(
    pretrain_set: &Dataset,
    pool: &OneShotPool,
    base: &ModelConfig,
    tcfg: &TrainConfig,
    model_seed: u64,
    n_seeds: usize,
    opts: &ProtocolOptions,
) -> Result<ExperimentReport, ExperimentError> {
    let started = Instant::now();
    let mut variants = vec![("full", Ablation::NONE)];
    variants.extend(Ablation::variants());
    let mut rows = Vec::new();
    for (name, ablation) in variants {
        log::info!("ablation variant {name}");
        let (model, _) = pretrain(pretrain_set, base.clone().with_ablation(ablation), tcfg, model_seed)?;
        let variant_opts = ProtocolOptions { dataset: format!("{}:{name}", opts.dataset), ..opts.clone() };
        let report = run_perturbation(pool, &model, n_seeds, &variant_opts)?;
        rows.extend(report.rows.into_iter().map(|r| ReportRow { condition: name.to_string(), ..r }));
    }
    ExperimentReport::from_rows(rows, started.elapsed().as_secs_f64())
}
