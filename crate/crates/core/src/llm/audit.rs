use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CompletionRequest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub timestamp: DateTime<Utc>,
    /// Hex SHA-256 of the prompt.
    pub prompt_hash: String,
    pub prompt: String,
    pub completion: String,
    pub temperature: f64,
    pub operation: String,
}

impl AuditRecord {
    pub fn new(request: &CompletionRequest, completion: &str, operation: &str) -> Self {
        let digest = Sha256::digest(request.prompt.as_bytes());
        let prompt_hash = digest.iter().map(|b| format!("{b:02x}")).collect();
        Self {
            timestamp: Utc::now(),
            prompt_hash,
            prompt: request.prompt.clone(),
            completion: completion.to_string(),
            temperature: request.temperature,
            operation: operation.to_string(),
        }
    }
}

/// Append-only record of every completion, kept in memory or written to a
/// newline-delimited JSON file.
#[derive(Debug, Default)]
pub struct AuditLog {
    inner: Mutex<AuditInner>,
}

#[derive(Debug, Default)]
struct AuditInner {
    records: Vec<AuditRecord>,
    sink: Option<(File, PathBuf)>,
    count: usize,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Appends to `path`, creating it (and its parent directory) if needed.
    pub fn with_file(path: &Path) -> io::Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let inner = AuditInner { records: Vec::new(), sink: Some((file, path.to_path_buf())), count: 0 };
        Ok(Self { inner: Mutex::new(inner) })
    }

    pub fn append(&self, record: AuditRecord) -> io::Result<()> {
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        match inner.sink.as_mut() {
            Some((file, _)) => {
                let mut line = serde_json::to_string(&record)?;
                line.push('\n');
                file.write_all(line.as_bytes())?;
                file.flush()?;
            }
            None => inner.records.push(record),
        }
        inner.count += 1;
        Ok(())
    }

    /// Everything appended so far. File-backed logs are read back from disk.
    pub fn records(&self) -> Vec<AuditRecord> {
        let inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        match &inner.sink {
            Some((_, path)) => Self::read_file(path).unwrap_or_default(),
            None => inner.records.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reads an ndjson audit file back.
    pub fn read_file(path: &Path) -> io::Result<Vec<AuditRecord>> {
        let text = std::fs::read_to_string(path)?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(io::Error::from))
            .collect()
    }
}
