//! The results store: a JSONL file of evaluation records plus a sidecar
//! manifest carrying the plan hash and software version.
//!
//! Record lines contain no timestamps, so a store produced from the mock
//! backend is byte-stable across executions; run metadata that does vary
//! (wall-clock time, gateway counters) lives in the manifest.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GatewayStats;
use crate::metrics::EvalRecord;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error at {path}:{line}: {source}")]
    Json {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate record key at {path}:{line}: {key}")]
    DuplicateKey { path: String, line: usize, key: String },
}

fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::Io { path: path.display().to_string(), source }
}

/// Sidecar metadata for a results store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreManifest {
    pub plan_hash: String,
    pub version: String,
    pub created: String,
    pub record_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gateway: Option<GatewayStats>,
}

pub fn manifest_path(store_path: &Path) -> PathBuf {
    let mut name = store_path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    store_path.with_file_name(name)
}

pub fn write_manifest(store_path: &Path, manifest: &StoreManifest) -> Result<(), StoreError> {
    let path = manifest_path(store_path);
    let serialized = serde_json::to_string_pretty(manifest)
        .map_err(|e| StoreError::Json { path: path.display().to_string(), line: 0, source: e })?;
    std::fs::write(&path, serialized).map_err(|e| io_err(&path, e))
}

pub fn read_manifest(store_path: &Path) -> Result<Option<StoreManifest>, StoreError> {
    let path = manifest_path(store_path);
    match std::fs::read_to_string(&path) {
        Ok(raw) => serde_json::from_str(&raw)
            .map(Some)
            .map_err(|e| StoreError::Json { path: path.display().to_string(), line: 0, source: e }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(&path, e)),
    }
}

/// Append-oriented record writer.
pub struct StoreWriter {
    path: PathBuf,
    writer: BufWriter<File>,
    written: usize,
}

impl StoreWriter {
    /// Create or truncate a store.
    pub fn create(path: &Path) -> Result<Self, StoreError> {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        Ok(Self { path: path.to_path_buf(), writer: BufWriter::new(file), written: 0 })
    }

    /// Open an existing store for appending (resume).
    pub fn append(path: &Path) -> Result<Self, StoreError> {
        let file =
            OpenOptions::new().create(true).append(true).open(path).map_err(|e| io_err(path, e))?;
        Ok(Self { path: path.to_path_buf(), writer: BufWriter::new(file), written: 0 })
    }

    pub fn write(&mut self, record: &EvalRecord) -> Result<(), StoreError> {
        let line = serde_json::to_string(record).map_err(|e| StoreError::Json {
            path: self.path.display().to_string(),
            line: 0,
            source: e,
        })?;
        writeln!(self.writer, "{line}").map_err(|e| io_err(&self.path, e))?;
        self.written += 1;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), StoreError> {
        self.writer.flush().map_err(|e| io_err(&self.path, e))
    }

    pub fn written(&self) -> usize {
        self.written
    }
}

/// Read a full store, enforcing the record-key uniqueness invariant.
pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>, StoreError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut records = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EvalRecord = serde_json::from_str(&line).map_err(|e| StoreError::Json {
            path: path.display().to_string(),
            line: i + 1,
            source: e,
        })?;
        let key = record.key();
        if !seen.insert(key.clone()) {
            return Err(StoreError::DuplicateKey {
                path: path.display().to_string(),
                line: i + 1,
                key: format!("{key:?}"),
            });
        }
        records.push(record);
    }
    Ok(records)
}
