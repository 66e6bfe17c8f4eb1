//! Labeled keypoint sequences and directory ingestion.
//!
//! On disk a dataset is a directory of `poseseq` documents, one
//! sub-directory per label:
//!
//! ```text
//! data/
//!   hello/0000.json
//!   hello/0001.json
//!   thanks/0000.json
//! ```
//!
//! A dictionary (one exemplar per label) may instead be flat:
//! `dict/hello.json`, `dict/thanks.json`. Files are read in sorted name
//! order so loading is deterministic.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::keypoints::{parse_poseseq, write_poseseq, KeypointError, KeypointSequence};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub label: String,
    pub sequence: KeypointSequence,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub items: Vec<LabeledSequence>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: KeypointError },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("no poseseq documents found under {0}")]
    Empty(PathBuf),
}

impl Dataset {
    pub fn new(items: Vec<LabeledSequence>) -> Self {
        Dataset { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Distinct labels, sorted.
    pub fn labels(&self) -> Vec<String> {
        self.by_label().into_keys().collect()
    }

    /// Item indices per label, labels sorted, indices in dataset order.
    pub fn by_label(&self) -> BTreeMap<String, Vec<usize>> {
        let mut map: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, item) in self.items.iter().enumerate() {
            map.entry(item.label.clone()).or_default().push(i);
        }
        map
    }

    /// The sub-dataset of items whose label satisfies `keep`, order preserved.
    pub fn filter_labels(&self, mut keep: impl FnMut(&str) -> bool) -> Dataset {
        Dataset { items: self.items.iter().filter(|it| keep(&it.label)).cloned().collect() }
    }

    /// Reads `<dir>/<label>/*.json` and flat `<dir>/<label>.json` documents.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
        let dir = dir.as_ref();
        let mut items = Vec::new();
        for entry in sorted_entries(dir)? {
            if entry.is_dir() {
                let label = file_label(&entry);
                for file in sorted_entries(&entry)? {
                    if is_json(&file) {
                        items.push(LabeledSequence { label: label.clone(), sequence: read_sequence(&file)? });
                    }
                }
            } else if is_json(&entry) {
                let label = entry.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                items.push(LabeledSequence { label, sequence: read_sequence(&entry)? });
            }
        }
        if items.is_empty() {
            return Err(DatasetError::Empty(dir.to_path_buf()));
        }
        Ok(Dataset { items })
    }

    /// Writes `<dir>/<label>/<nnnn>.json`, numbering samples per label in dataset order.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
        let dir = dir.as_ref();
        let mut counters: BTreeMap<&str, usize> = BTreeMap::new();
        for item in &self.items {
            let n = counters.entry(&item.label).or_default();
            let class_dir = dir.join(&item.label);
            fs::create_dir_all(&class_dir).map_err(|e| io_error(&class_dir, e))?;
            let path = class_dir.join(format!("{:04}.json", *n));
            fs::write(&path, write_poseseq(&item.sequence)).map_err(|e| io_error(&path, e))?;
            *n += 1;
        }
        Ok(())
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| io_error(dir, e))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| io_error(dir, e))?;
    entries.sort();
    Ok(entries)
}

fn is_json(path: &Path) -> bool {
    path.is_file() && path.extension().is_some_and(|e| e == "json")
}

fn file_label(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn read_sequence(path: &Path) -> Result<KeypointSequence, DatasetError> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    let seq = parse_poseseq(&bytes).map_err(|source| DatasetError::Parse { path: path.to_path_buf(), source })?;
    Ok(if seq.source_id.is_empty() { seq.with_source_id(path.to_string_lossy()) } else { seq })
}

fn io_error(path: &Path, e: std::io::Error) -> DatasetError {
    DatasetError::Io { path: path.to_path_buf(), message: e.to_string() }
}
