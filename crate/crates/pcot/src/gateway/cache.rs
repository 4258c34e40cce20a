//! Content-addressed response cache.
//!
//! One JSON file per (model_id, content_hash) key under
//! `cache/<model_id>/<first 2 hex of hash>/<hash>.json`. Writes go through a
//! temp file and an atomic rename so concurrent workers and interrupted runs
//! never leave a torn entry. Changing any prompt byte changes the hash and
//! forces a miss.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use chrono::Utc;
use serde::{Deserialize, Serialize};

use super::{CompletionRequest, CompletionResult, GatewayError};

/// The on-disk shape of one cache entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request_summary: RequestSummary,
    pub text: String,
    pub latency_ms: u64,
    #[serde(default = "default_attempts")]
    pub attempts: u32,
    #[serde(default)]
    pub truncated: bool,
    pub timestamp: String,
}

fn default_attempts() -> u32 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RequestSummary {
    pub model_id: String,
    pub content_hash: String,
    pub request_tag: String,
    pub prompt_chars: usize,
}

pub(super) struct ResponseCache {
    root: PathBuf,
    write_counter: AtomicU64,
}

/// Model ids may contain path separators (`org/model`); keep the directory
/// name filesystem-safe while the true id stays inside the entry.
fn sanitize_component(raw: &str) -> String {
    raw.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect()
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root, write_counter: AtomicU64::new(0) })
    }

    fn entry_path(&self, model_id: &str, content_hash: &str) -> PathBuf {
        let shard = content_hash.get(..2).unwrap_or("00");
        self.root
            .join(sanitize_component(model_id))
            .join(shard)
            .join(format!("{content_hash}.json"))
    }

    pub fn get(&self, model_id: &str, content_hash: &str) -> Result<Option<CacheEntry>, GatewayError> {
        let path = self.entry_path(model_id, content_hash);
        match fs::read_to_string(&path) {
            Ok(raw) => match serde_json::from_str::<CacheEntry>(&raw) {
                Ok(entry) => Ok(Some(entry)),
                // A corrupt entry is treated as a miss and overwritten.
                Err(_) => Ok(None),
            },
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn put(&self, req: &CompletionRequest, result: &CompletionResult) -> Result<(), GatewayError> {
        let path = self.entry_path(&req.model.model_id, &req.prompt.content_hash);
        let dir = path.parent().expect("entry path has a parent");
        fs::create_dir_all(dir)?;
        let entry = CacheEntry {
            request_summary: RequestSummary {
                model_id: req.model.model_id.clone(),
                content_hash: req.prompt.content_hash.clone(),
                request_tag: req.request_tag.clone(),
                prompt_chars: req.prompt.text.chars().count(),
            },
            text: result.text.clone(),
            latency_ms: result.latency_ms,
            attempts: result.attempts,
            truncated: result.truncated,
            timestamp: Utc::now().to_rfc3339(),
        };
        let serialized = serde_json::to_string_pretty(&entry)
            .map_err(|e| GatewayError::Config(format!("cache serialization: {e}")))?;
        let nonce = self.write_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = dir.join(format!(".tmp-{}-{nonce}", std::process::id()));
        fs::write(&tmp, serialized)?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }
}

pub(super) fn cache_paths_exist(root: &Path, model_id: &str, content_hash: &str) -> bool {
    let shard = content_hash.get(..2).unwrap_or("00");
    root.join(sanitize_component(model_id)).join(shard).join(format!("{content_hash}.json")).exists()
}
