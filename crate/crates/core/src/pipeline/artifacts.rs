use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PipelineError, Stage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRow {
    pub id: String,
    pub error: String,
}

impl FailureRow {
    pub fn new(id: impl Into<String>, error: impl ToString) -> Self {
        Self {
            id: id.into(),
            error: error.to_string(),
        }
    }
}

/// Written last, so its presence marks a stage as finished.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMeta {
    pub stage: Stage,
    pub inputs: usize,
    pub outputs: usize,
    pub failures: usize,
    pub input_digest: String,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, row).expect("row serializes");
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| PipelineError::Artifact {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", i + 1),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

pub fn digest_of(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

/// Paths of one stage's artifacts inside a run directory.
#[derive(Debug, Clone)]
pub struct StagePaths {
    pub rows: PathBuf,
    pub failures: PathBuf,
    pub meta: PathBuf,
}

impl StagePaths {
    pub fn new(run_dir: &Path, stage: Stage) -> Self {
        let name = stage.name();
        // the report stage's output is the report itself
        let rows = match stage {
            Stage::Report => run_dir.join("report.json"),
            _ => run_dir.join(format!("{name}.jsonl")),
        };
        Self {
            rows,
            failures: run_dir.join(format!("{name}.failures.jsonl")),
            meta: run_dir.join(format!("{name}.meta.json")),
        }
    }

    pub fn read_meta(&self) -> Option<StageMeta> {
        let text = fs::read_to_string(&self.meta).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn write_meta(&self, meta: &StageMeta) -> Result<(), PipelineError> {
        let mut bytes = serde_json::to_vec_pretty(meta).expect("meta serializes");
        bytes.push(b'\n');
        write_atomic(&self.meta, &bytes)
    }
}
