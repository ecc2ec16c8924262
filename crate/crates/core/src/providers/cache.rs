//! Append-only judgment cache.
//!
//! One JSON record per line in `<dir>/judgments.jsonl`:
//! `cache_key, model_id, prompt_id, p_consistent, raw_token, timestamp`.
//! The key hashes the model, the prompt and both texts, so editing an
//! example invalidates its entries even if the id is reused.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Example;
use crate::error::{Error, Result};

pub const CACHE_FILE: &str = "judgments.jsonl";

/// Hex SHA-256 over length-prefixed `(model_id, prompt_id, grounding, generated_text)`.
pub fn cache_key(model_id: &str, prompt_id: &str, e: &Example) -> String {
    let mut h = Sha256::new();
    for part in [model_id, prompt_id, &e.grounding, &e.generated_text] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub cache_key: String,
    pub model_id: String,
    pub prompt_id: String,
    pub p_consistent: f64,
    pub raw_token: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

/// Concurrent readers, one serialized writer.
pub struct JudgmentCache {
    path: PathBuf,
    entries: RwLock<HashMap<String, CacheRecord>>,
    writer: Mutex<File>,
}

impl JudgmentCache {
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(CACHE_FILE);
        let mut entries = HashMap::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    path: path.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                entries.insert(rec.cache_key.clone(), rec);
            }
        }
        let writer = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(JudgmentCache {
            path,
            entries: RwLock::new(entries),
            writer: Mutex::new(writer),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, key: &str) -> Option<CacheRecord> {
        self.entries.read().get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&self, key: String, model_id: &str, prompt_id: &str, p: f64, raw_token: &str) -> Result<()> {
        let rec = CacheRecord {
            cache_key: key,
            model_id: model_id.to_string(),
            prompt_id: prompt_id.to_string(),
            p_consistent: p,
            raw_token: raw_token.to_string(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let mut line = serde_json::to_vec(&rec)?;
        line.push(b'\n');
        let mut w = self.writer.lock();
        w.write_all(&line)?;
        w.flush()?;
        self.entries.write().insert(rec.cache_key.clone(), rec);
        Ok(())
    }
}
