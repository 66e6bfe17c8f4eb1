//! One-shot dictionary search.
//!
//! A frozen model embeds one exemplar per sign into a [`SupportSet`]. A query
//! is embedded with the same model, scored against every row, and the scores
//! are turned into label probabilities with a temperature softmax. Ranking
//! uses the raw scores, with ties going to the earlier support row.

mod format;

pub use format::{SupportFormatError, SUPPORT_MAGIC, SUPPORT_VERSION};

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keypoints::KeypointSequence;
use crate::nncore::softmax;
use crate::poseformer::{EmbeddingVector, ModelError, PoseFormerModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    /// `q·e / sqrt(d)`
    #[default]
    ScaledDot,
    Dot,
    Cosine,
    /// `-||q - e||`
    NegEuclidean,
}

impl Similarity {
    pub const ALL: [Similarity; 4] =
        [Similarity::ScaledDot, Similarity::Dot, Similarity::Cosine, Similarity::NegEuclidean];

    pub fn id(self) -> u8 {
        match self {
            Similarity::ScaledDot => 0,
            Similarity::Dot => 1,
            Similarity::Cosine => 2,
            Similarity::NegEuclidean => 3,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.id() == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            Similarity::ScaledDot => "scaled_dot",
            Similarity::Dot => "dot",
            Similarity::Cosine => "cosine",
            Similarity::NegEuclidean => "neg_euclidean",
        }
    }

    pub fn score(self, query: &[f32], row: &[f32]) -> f64 {
        match self {
            Similarity::ScaledDot => dot(query, row) / (query.len() as f64).sqrt(),
            Similarity::Dot => dot(query, row),
            Similarity::Cosine => {
                let denom = dot(query, query).sqrt() * dot(row, row).sqrt();
                if denom > 0.0 {
                    dot(query, row) / denom
                } else {
                    0.0
                }
            }
            Similarity::NegEuclidean => -query
                .iter()
                .zip(row)
                .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }
}

impl fmt::Display for Similarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Similarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|sim| sim.name() == s)
            .ok_or_else(|| format!("unknown similarity {s:?} (expected scaled_dot, dot, cosine or neg_euclidean)"))
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub label: String,
    pub probability: f64,
    pub rank: usize,
}

/// Labels in rank order with their softmax probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub entries: Vec<RankedEntry>,
}

impl RankedResult {
    pub fn top(&self, k: usize) -> &[RankedEntry] {
        &self.entries[..k.min(self.entries.len())]
    }

    pub fn truncate(mut self, k: usize) -> Self {
        self.entries.truncate(k);
        self
    }

    pub fn rank_of(&self, label: &str) -> Option<usize> {
        self.entries.iter().find(|e| e.label == label).map(|e| e.rank)
    }
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),
    #[error("support set needs at least one entry")]
    Empty,
    #[error("failed to embed {label:?}: {source}")]
    Embedding { label: String, source: ModelError },
    #[error("model fingerprint {found} does not match support set fingerprint {expected}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("k = {k} is outside 1..={n}")]
    InvalidK { k: usize, n: usize },
    #[error("embedding has dimension {found}, support set has {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("non-finite embedding value for {0:?}")]
    NonFinite(String),
    #[error(transparent)]
    Format(#[from] SupportFormatError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportOptions {
    pub similarity: Similarity,
    pub temperature: f32,
}

impl Default for SupportOptions {
    fn default() -> Self {
        SupportOptions { similarity: Similarity::ScaledDot, temperature: 1.0 }
    }
}

/// Frozen dictionary index: one embedding row per label.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    labels: Vec<String>,
    dim: usize,
    embeddings: Vec<f32>,
    model_fingerprint: [u8; 32],
    similarity: Similarity,
    temperature: f32,
}

impl SupportSet {
    pub fn new(
        entries: Vec<(String, EmbeddingVector)>,
        model_fingerprint: [u8; 32],
        options: SupportOptions,
    ) -> Result<Self, RetrievalError> {
        check_temperature(options.temperature as f64)?;
        let dim = entries.first().ok_or(RetrievalError::Empty)?.1.dim();
        let mut seen = HashSet::with_capacity(entries.len());
        let mut labels = Vec::with_capacity(entries.len());
        let mut embeddings = Vec::with_capacity(entries.len() * dim);
        for (label, e) in entries {
            if !seen.insert(label.clone()) {
                return Err(RetrievalError::DuplicateLabel(label));
            }
            if e.dim() != dim {
                return Err(RetrievalError::Dimension { expected: dim, found: e.dim() });
            }
            if e.0.iter().any(|v| !v.is_finite()) {
                return Err(RetrievalError::NonFinite(label));
            }
            labels.push(label);
            embeddings.extend_from_slice(&e.0);
        }
        Ok(SupportSet {
            labels,
            dim,
            embeddings,
            model_fingerprint,
            similarity: options.similarity,
            temperature: options.temperature,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.embeddings.chunks_exact(self.dim)
    }

    pub fn model_fingerprint(&self) -> [u8; 32] {
        self.model_fingerprint
    }

    pub fn similarity(&self) -> Similarity {
        self.similarity
    }

    pub fn temperature(&self) -> f32 {
        self.temperature
    }

    pub fn check_model(&self, model: &PoseFormerModel) -> Result<(), RetrievalError> {
        if model.fingerprint() != self.model_fingerprint {
            return Err(RetrievalError::FingerprintMismatch {
                expected: hex::encode(self.model_fingerprint),
                found: model.fingerprint_hex(),
            });
        }
        Ok(())
    }

    /// Similarity of `query` to every row, in support order.
    pub fn scores(&self, query: &EmbeddingVector) -> Result<Vec<f64>, RetrievalError> {
        if query.dim() != self.dim {
            return Err(RetrievalError::Dimension { expected: self.dim, found: query.dim() });
        }
        let q = query.as_slice();
        Ok(self.rows().map(|row| self.similarity.score(q, row)).collect())
    }

    /// Full ranking of every label for an embedded query.
    pub fn rank(&self, query: &EmbeddingVector, temperature: Option<f64>) -> Result<RankedResult, RetrievalError> {
        let temperature = temperature.unwrap_or(self.temperature as f64);
        check_temperature(temperature)?;
        let scores = self.scores(query)?;
        Ok(rank_scores(&self.labels, &scores, temperature))
    }

    /// Top-`k` labels for an embedded query.
    pub fn query_embedding(
        &self,
        query: &EmbeddingVector,
        k: usize,
        temperature: Option<f64>,
    ) -> Result<RankedResult, RetrievalError> {
        if k == 0 || k > self.len() {
            return Err(RetrievalError::InvalidK { k, n: self.len() });
        }
        Ok(self.rank(query, temperature)?.truncate(k))
    }

    /// Embeds `seq` with `model` (which must be the model the support set was
    /// built with) and returns the top-`k` labels.
    pub fn query(
        &self,
        model: &PoseFormerModel,
        seq: &KeypointSequence,
        k: usize,
        temperature: Option<f64>,
    ) -> Result<RankedResult, RetrievalError> {
        self.check_model(model)?;
        if k == 0 || k > self.len() {
            return Err(RetrievalError::InvalidK { k, n: self.len() });
        }
        let q = model
            .embed(seq)
            .map_err(|source| RetrievalError::Embedding { label: seq.source_id.clone(), source })?;
        self.query_embedding(&q, k, temperature)
    }

    /// A new support set with one more row; existing rows are untouched.
    pub fn with_entry(&self, label: impl Into<String>, embedding: EmbeddingVector) -> Result<Self, RetrievalError> {
        let label = label.into();
        if self.contains(&label) {
            return Err(RetrievalError::DuplicateLabel(label));
        }
        if embedding.dim() != self.dim {
            return Err(RetrievalError::Dimension { expected: self.dim, found: embedding.dim() });
        }
        if embedding.0.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite(label));
        }
        let mut next = self.clone();
        next.labels.push(label);
        next.embeddings.extend_from_slice(&embedding.0);
        Ok(next)
    }

    pub fn add_entry(
        &self,
        model: &PoseFormerModel,
        label: impl Into<String>,
        seq: &KeypointSequence,
    ) -> Result<Self, RetrievalError> {
        let label = label.into();
        self.check_model(model)?;
        if self.contains(&label) {
            return Err(RetrievalError::DuplicateLabel(label));
        }
        let e = model.embed(seq).map_err(|source| RetrievalError::Embedding { label: label.clone(), source })?;
        self.with_entry(label, e)
    }

    /// Support set restricted to the given row indices, in that order.
    pub fn select(&self, rows: &[usize]) -> Result<Self, RetrievalError> {
        if rows.is_empty() {
            return Err(RetrievalError::Empty);
        }
        let mut out = SupportSet { labels: Vec::new(), embeddings: Vec::new(), ..self.clone() };
        for &i in rows {
            out.labels.push(self.labels[i].clone());
            out.embeddings.extend_from_slice(self.row(i));
        }
        Ok(out)
    }

    pub fn with_options(mut self, options: SupportOptions) -> Result<Self, RetrievalError> {
        check_temperature(options.temperature as f64)?;
        self.similarity = options.similarity;
        self.temperature = options.temperature;
        Ok(self)
    }
}

fn check_temperature(t: f64) -> Result<(), RetrievalError> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(RetrievalError::InvalidTemperature(t))
    }
}

/// Orders labels by descending score (ties: lower index first) and attaches
/// `softmax(scores / temperature)` probabilities.
pub fn rank_scores(labels: &[String], scores: &[f64], temperature: f64) -> RankedResult {
    let scaled: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    let probs = softmax(&scaled);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let entries = order
        .into_iter()
        .enumerate()
        .map(|(r, i)| RankedEntry { label: labels[i].clone(), probability: probs[i], rank: r + 1 })
        .collect();
    RankedResult { entries }
}

/// Embeds one exemplar per label. Labels must be unique; any embedding failure
/// is reported with its label.
pub fn build_support_set(
    model: &PoseFormerModel,
    dictionary: &[(String, KeypointSequence)],
    options: SupportOptions,
) -> Result<SupportSet, RetrievalError> {
    let mut seen = HashSet::with_capacity(dictionary.len());
    for (label, _) in dictionary {
        if !seen.insert(label.as_str()) {
            return Err(RetrievalError::DuplicateLabel(label.clone()));
        }
    }
    let entries = dictionary
        .par_iter()
        .map(|(label, seq)| {
            model
                .embed(seq)
                .map(|e| (label.clone(), e))
                .map_err(|source| RetrievalError::Embedding { label: label.clone(), source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    SupportSet::new(entries, model.fingerprint(), options)
}

/// Top-`k` query against a support set after verifying the model fingerprint.
pub fn query_support(
    support: &SupportSet,
    model: &PoseFormerModel,
    seq: &KeypointSequence,
    k: usize,
) -> Result<RankedResult, RetrievalError> {
    support.query(model, seq, k, None)
}
