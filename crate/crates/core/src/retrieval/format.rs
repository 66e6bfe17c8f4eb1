//! Support-set file, all integers little-endian:
//!
//! ```text
//! "SSET" | version u32 | similarity u8 | temperature f32 | d u32 | n u32 | model fingerprint [32]
//!        | n x { label_len u16 | UTF-8 label } | n x d f32 row-major
//! ```

use std::collections::HashSet;
use std::path::Path;

use thiserror::Error;

use super::{RetrievalError, Similarity, SupportSet};
use crate::nncore::{ByteReader, WeightsError};
use crate::poseformer::PoseFormerModel;

pub const SUPPORT_MAGIC: &[u8; 4] = b"SSET";
pub const SUPPORT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum SupportFormatError {
    #[error("not a support-set file (bad magic)")]
    BadMagic,
    #[error("unsupported support-set version {0}")]
    UnsupportedVersion(u32),
    #[error("support-set file is truncated")]
    Truncated,
    #[error("unknown similarity id {0}")]
    UnknownSimilarity(u8),
    #[error("corrupt support-set file: {0}")]
    Corrupt(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<WeightsError> for SupportFormatError {
    fn from(e: WeightsError) -> Self {
        match e {
            WeightsError::Truncated => SupportFormatError::Truncated,
            other => SupportFormatError::Corrupt(other.to_string()),
        }
    }
}

impl SupportSet {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(53 + self.embeddings.len() * 4 + self.labels.len() * 16);
        out.extend_from_slice(SUPPORT_MAGIC);
        out.extend_from_slice(&SUPPORT_VERSION.to_le_bytes());
        out.push(self.similarity.id());
        out.extend_from_slice(&self.temperature.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.labels.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.model_fingerprint);
        for label in &self.labels {
            out.extend_from_slice(&(label.len() as u16).to_le_bytes());
            out.extend_from_slice(label.as_bytes());
        }
        for v in &self.embeddings {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses a complete support-set file. Nothing is returned unless the
    /// whole input is well formed.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SupportFormatError> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != SUPPORT_MAGIC {
            return Err(SupportFormatError::BadMagic);
        }
        let version = r.u32()?;
        if version != SUPPORT_VERSION {
            return Err(SupportFormatError::UnsupportedVersion(version));
        }
        let sim_id = r.take(1)?[0];
        let similarity = Similarity::from_id(sim_id).ok_or(SupportFormatError::UnknownSimilarity(sim_id))?;
        let temperature = r.f32()?;
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(SupportFormatError::Corrupt(format!("temperature {temperature}")));
        }
        let dim = r.u32()? as usize;
        let n = r.u32()? as usize;
        if dim == 0 || n == 0 {
            return Err(SupportFormatError::Corrupt("empty support set".into()));
        }
        let mut model_fingerprint = [0u8; 32];
        model_fingerprint.copy_from_slice(r.take(32)?);
        let mut labels = Vec::with_capacity(n.min(1 << 20));
        let mut seen = HashSet::new();
        for _ in 0..n {
            let len = r.u16()? as usize;
            let label = std::str::from_utf8(r.take(len)?)
                .map_err(|_| SupportFormatError::Corrupt("label is not UTF-8".into()))?
                .to_string();
            if !seen.insert(label.clone()) {
                return Err(SupportFormatError::Corrupt(format!("duplicate label {label:?}")));
            }
            labels.push(label);
        }
        let count = n.checked_mul(dim).ok_or(SupportFormatError::Truncated)?;
        let raw = r.take(count.checked_mul(4).ok_or(SupportFormatError::Truncated)?)?;
        let embeddings: Vec<f32> =
            raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        if embeddings.iter().any(|v| !v.is_finite()) {
            return Err(SupportFormatError::Corrupt("non-finite embedding value".into()));
        }
        if !r.is_empty() {
            return Err(SupportFormatError::Corrupt("trailing bytes".into()));
        }
        Ok(SupportSet { labels, dim, embeddings, model_fingerprint, similarity, temperature })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SupportFormatError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| SupportFormatError::Io(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SupportFormatError> {
        let bytes = std::fs::read(path).map_err(|e| SupportFormatError::Io(e.to_string()))?;
        Self::from_bytes(&bytes)
    }

    /// Loads a support set and rejects it unless it was built with `model`.
    pub fn load_for_model(path: impl AsRef<Path>, model: &PoseFormerModel) -> Result<Self, RetrievalError> {
        let support = Self::load(path)?;
        support.check_model(model)?;
        if support.dim() != model.config().representation_size {
            return Err(RetrievalError::Dimension {
                expected: model.config().representation_size,
                found: support.dim(),
            });
        }
        Ok(support)
    }
}
