use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use signshot::keypoints::parse_poseseq_value;
use signshot::poseformer::PoseFormerModel;
use signshot::retrieval::SupportSet;

use crate::ServiceError;

/// One appended vocabulary entry, as stored in the write-ahead log.
#[derive(Debug, Serialize, Deserialize)]
pub struct WalRecord {
    pub label: String,
    pub poseseq: Value,
}

#[derive(Debug, Default)]
pub struct Counters {
    pub queries: AtomicU64,
    pub adds: AtomicU64,
    pub client_errors: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CounterSnapshot {
    pub queries: u64,
    pub adds: u64,
    pub client_errors: u64,
}

impl Counters {
    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            queries: self.queries.load(Ordering::Relaxed),
            adds: self.adds.load(Ordering::Relaxed),
            client_errors: self.client_errors.load(Ordering::Relaxed),
        }
    }
}

/// Frozen model plus the active support set.
///
/// Readers clone the `Arc` of the current support set and never block on
/// writers for longer than that clone. Writers serialize on `writer`, build
/// the extended set off to the side, append to the log and then swap.
pub struct ServiceState {
    model: Arc<PoseFormerModel>,
    support: RwLock<Arc<SupportSet>>,
    pub(crate) writer: tokio::sync::Mutex<Option<Wal>>,
    pub counters: Counters,
}

impl ServiceState {
    /// Loads the model and support set, checks that they belong together and
    /// replays the log (when given) on top of the base support set.
    pub fn load(model_path: &Path, support_path: &Path, wal_path: Option<&Path>) -> Result<Self, ServiceError> {
        let model = PoseFormerModel::load(model_path)
            .map_err(|e| ServiceError::Startup(format!("{}: {e}", model_path.display())))?;
        let support = SupportSet::load_for_model(support_path, &model)
            .map_err(|e| ServiceError::Startup(format!("{}: {e}", support_path.display())))?;
        Self::from_parts(model, support, wal_path)
    }

    pub fn from_parts(model: PoseFormerModel, support: SupportSet, wal_path: Option<&Path>) -> Result<Self, ServiceError> {
        support.check_model(&model).map_err(|e| ServiceError::Startup(e.to_string()))?;
        let (support, wal) = match wal_path {
            Some(path) => {
                let (support, replayed) = replay(&model, support, path)?;
                if replayed > 0 {
                    log::info!("replayed {replayed} added entries from {}", path.display());
                }
                (support, Some(Wal::open(path)?))
            }
            None => (support, None),
        };
        Ok(ServiceState {
            model: Arc::new(model),
            support: RwLock::new(Arc::new(support)),
            writer: tokio::sync::Mutex::new(wal),
            counters: Counters::default(),
        })
    }

    pub fn model(&self) -> &Arc<PoseFormerModel> {
        &self.model
    }

    /// The support set current at the time of the call.
    pub fn support(&self) -> Arc<SupportSet> {
        self.support.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub(crate) fn publish(&self, next: SupportSet) {
        *self.support.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(next);
    }
}

pub(crate) struct Wal {
    path: PathBuf,
    file: File,
}

impl Wal {
    fn open(path: &Path) -> Result<Self, ServiceError> {
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| wal_error(path, e))?;
        Ok(Wal { path: path.to_path_buf(), file })
    }

    /// Appends one record and syncs it to disk before returning.
    pub(crate) fn append(&mut self, record: &WalRecord) -> Result<(), ServiceError> {
        let mut line = serde_json::to_vec(record).expect("records are always serializable");
        line.push(b'\n');
        self.file.write_all(&line).map_err(|e| wal_error(&self.path, e))?;
        self.file.sync_data().map_err(|e| wal_error(&self.path, e))
    }
}

/// Applies every complete record of the log. A final line without a newline
/// is the remains of an interrupted append: it is dropped (and truncated away)
/// with a warning. Any other bad line is a startup error.
fn replay(model: &PoseFormerModel, mut support: SupportSet, path: &Path) -> Result<(SupportSet, usize), ServiceError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((support, 0)),
        Err(e) => return Err(wal_error(path, e)),
    };
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut offset = 0u64;
    let mut replayed = 0;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| wal_error(path, e))?;
        if n == 0 {
            break;
        }
        if !line.ends_with('\n') {
            log::warn!("{}: dropping incomplete trailing record ({n} bytes)", path.display());
            let f = OpenOptions::new().write(true).open(path).map_err(|e| wal_error(path, e))?;
            f.set_len(offset).map_err(|e| wal_error(path, e))?;
            break;
        }
        let at = |msg: String| ServiceError::Startup(format!("{} at byte {offset}: {msg}", path.display()));
        let record: WalRecord = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        let seq = parse_poseseq_value(&record.poseseq).map_err(|e| at(e.to_string()))?;
        support = support.add_entry(model, record.label, &seq).map_err(|e| at(e.to_string()))?;
        offset += n as u64;
        replayed += 1;
    }
    Ok((support, replayed))
}

fn wal_error(path: &Path, e: std::io::Error) -> ServiceError {
    ServiceError::Startup(format!("write-ahead log {}: {e}", path.display()))
}
