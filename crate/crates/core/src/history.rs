//! Run persistence: an append-only JSONL history plus a manifest sidecar.
//!
//! A run directory holds `manifest.json` (config, embedded pool, pool hash,
//! roles), `history.jsonl` (one record per evaluation) and
//! `timestamps.jsonl` (wall-clock data, kept apart so histories stay
//! byte-identical across reruns).

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::TokenCount;
use crate::gp::KernelParams;
use crate::pareto::{non_dominated_set, ObjectiveVector, ParetoFront};
use crate::pool::PoolDocument;

pub const SCHEMA_VERSION: &str = "1.0";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const TIMESTAMPS_FILE: &str = "timestamps.jsonl";

#[derive(Debug, Error)]
pub enum HistoryError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}, line {line}: {message}")]
    Corrupt {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: unsupported schema version {found} (this build reads {SCHEMA_VERSION})")]
    Version { path: String, found: String },
    #[error("{path}: {message}")]
    Manifest { path: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HistoryError + '_ {
    move |source| HistoryError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Init,
    Bo,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Init => "init",
            Phase::Bo => "bo",
        }
    }
}

/// Fitted surrogate hyperparameters at the time a proposal was made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSnapshot {
    pub accuracy: KernelParams,
    pub neg_cost: KernelParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub index: usize,
    pub phase: Phase,
    /// Init: sample number from 0. Bo: iteration number from 1.
    pub iteration: usize,
    /// `{role: model_id}` in role order.
    pub assignment: IndexMap<String, String>,
    /// Pool indices in role order.
    pub team: Vec<usize>,
    /// Normalized feature row of each role's model.
    pub features: Vec<Vec<f64>>,
    pub accuracy: f64,
    pub cost_usd: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<BTreeMap<String, TokenCount>>,
    /// Flattened continuous proposal before projection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surrogates: Option<SurrogateSnapshot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acquisition_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_acquisition_value: Option<f64>,
}

impl HistoryRecord {
    pub fn objectives(&self) -> ObjectiveVector {
        ObjectiveVector::from_cost(self.accuracy, self.cost_usd)
    }

    pub fn flat_features(&self) -> Vec<f64> {
        self.features.concat()
    }
}

/// The dataset `D_t`: every evaluation so far, in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RunHistory {
    pub records: Vec<HistoryRecord>,
}

impl RunHistory {
    pub fn new(records: Vec<HistoryRecord>) -> Self {
        RunHistory { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn objectives(&self) -> Vec<ObjectiveVector> {
        self.records.iter().map(HistoryRecord::objectives).collect()
    }

    pub fn front(&self) -> ParetoFront {
        non_dominated_set(&self.objectives())
    }

    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &HistoryRecord> {
        self.records.iter().filter(move |r| r.phase == phase)
    }

    pub fn count(&self, phase: Phase) -> usize {
        self.phase(phase).count()
    }

    /// Role names as recorded, taken from the first record.
    pub fn roles(&self) -> Vec<String> {
        self.records
            .first()
            .map(|r| r.assignment.keys().cloned().collect())
            .unwrap_or_default()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Reads a history file. Any unparseable line, including a truncated
    /// final line, is an error naming that line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HistoryError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(io_err(path))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let corrupt = |message: String| HistoryError::Corrupt {
                path: path.display().to_string(),
                line: i + 1,
                message,
            };
            let record: HistoryRecord =
                serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
            if record.index != records.len() {
                return Err(corrupt(format!(
                    "record index {} out of sequence (expected {})",
                    record.index,
                    records.len()
                )));
            }
            records.push(record);
        }
        Ok(RunHistory { records })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: String,
    pub run_id: String,
    pub roles: Vec<String>,
    pub pool_hash: String,
    pub pool: PoolDocument,
    /// The effective run configuration, as a JSON document.
    pub config: serde_json::Value,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HistoryError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| HistoryError::Manifest {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        let found = value
            .get("schema_version")
            .and_then(|v| v.as_str())
            .unwrap_or("<missing>")
            .to_string();
        if !is_supported_version(&found) {
            return Err(HistoryError::Version {
                path: path.display().to_string(),
                found,
            });
        }
        serde_json::from_value(value).map_err(|e| HistoryError::Manifest {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HistoryError> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(io_err(path))
    }
}

/// Same major version as this build.
pub fn is_supported_version(version: &str) -> bool {
    let major = |v: &str| v.split('.').next().map(str::to_string);
    major(version).is_some_and(|m| Some(m) == major(SCHEMA_VERSION))
}

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn history(&self) -> PathBuf {
        self.root.join(HISTORY_FILE)
    }

    pub fn timestamps(&self) -> PathBuf {
        self.root.join(TIMESTAMPS_FILE)
    }

    pub fn create(&self) -> Result<(), HistoryError> {
        fs::create_dir_all(&self.root).map_err(io_err(&self.root))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TimestampEntry {
    index: usize,
    finished_unix: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_seconds: Option<f64>,
}

/// Appends records durably, one line per evaluation.
#[derive(Debug)]
pub struct HistoryWriter {
    dir: RunDir,
    history: File,
    timestamps: File,
}

impl HistoryWriter {
    /// Opens (creating if needed) the history files of `dir` for appending.
    pub fn open(dir: RunDir) -> Result<Self, HistoryError> {
        dir.create()?;
        let open = |p: PathBuf| {
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(&p)
                .map_err(io_err(&p))
        };
        let history = open(dir.history())?;
        let timestamps = open(dir.timestamps())?;
        Ok(HistoryWriter {
            dir,
            history,
            timestamps,
        })
    }

    /// Starts a fresh history, discarding any previous one in `dir`.
    pub fn create(dir: RunDir) -> Result<Self, HistoryError> {
        dir.create()?;
        for p in [dir.history(), dir.timestamps()] {
            File::create(&p).map_err(io_err(&p))?;
        }
        Self::open(dir)
    }

    pub fn dir(&self) -> &RunDir {
        &self.dir
    }

    pub fn append(
        &mut self,
        record: &HistoryRecord,
        wall_seconds: Option<f64>,
    ) -> Result<(), HistoryError> {
        let mut line = serde_json::to_string(record).expect("record serializes");
        line.push('\n');
        let path = self.dir.history();
        self.history
            .write_all(line.as_bytes())
            .map_err(io_err(&path))?;
        self.history.sync_data().map_err(io_err(&path))?;

        let finished_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0.0, |d| d.as_secs_f64());
        let entry = TimestampEntry {
            index: record.index,
            finished_unix,
            wall_seconds,
        };
        let mut line = serde_json::to_string(&entry).expect("timestamp serializes");
        line.push('\n');
        let path = self.dir.timestamps();
        self.timestamps
            .write_all(line.as_bytes())
            .map_err(io_err(&path))
    }
}
