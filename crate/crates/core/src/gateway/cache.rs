use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{GatewayError, RenderedPrompt, TokenUsage};

/// Content hash of everything that determines a completion.
pub fn cache_key(model: &str, prompt: &RenderedPrompt, temperature: f64) -> String {
    let material = serde_json::json!([model, prompt.system, prompt.user, temperature.to_bits()]);
    hex::encode(Sha256::digest(material.to_string().as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub model: String,
    pub temperature: f64,
    pub prompt: RenderedPrompt,
    pub response: String,
    #[serde(default)]
    pub usage: Option<TokenUsage>,
}

/// One JSON file per entry, named by its key. Writes go through a temporary
/// file in the same directory and an atomic rename.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| GatewayError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<CacheEntry>, GatewayError> {
        let path = self.path_for(key);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GatewayError::CacheCorrupt(format!("{}: {e}", path.display()))),
        };
        let entry: CacheEntry =
            serde_json::from_str(&text).map_err(|e| GatewayError::CacheCorrupt(format!("{}: {e}", path.display())))?;
        if entry.key != key {
            return Err(GatewayError::CacheCorrupt(format!("{}: key mismatch", path.display())));
        }
        Ok(Some(entry))
    }

    pub fn put(&self, entry: &CacheEntry) -> Result<(), GatewayError> {
        let err = |e: std::io::Error| GatewayError::Cache(e.to_string());
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(err)?;
        let body = serde_json::to_vec_pretty(entry).expect("cache entry serializes");
        tmp.write_all(&body).map_err(err)?;
        tmp.persist(self.path_for(&entry.key)).map_err(|e| err(e.error))?;
        Ok(())
    }
}
