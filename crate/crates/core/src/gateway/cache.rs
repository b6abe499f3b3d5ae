//! Append-only JSON-lines cache of backend exchanges, keyed by request
//! digest with last-write-wins semantics.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use thiserror::Error;

use super::VlmExchange;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("failed to open cache {path}: {source}")]
    Open {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to append to cache {path}: {source}")]
    Append {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to serialize exchange: {0}")]
    Serialize(#[from] serde_json::Error),
}

pub struct ExchangeCache {
    path: PathBuf,
    inner: Mutex<Inner>,
}

struct Inner {
    index: HashMap<String, VlmExchange>,
    writer: Option<File>,
}

impl ExchangeCache {
    /// Opens (or primes) the cache at `path`. A missing file is an empty
    /// cache. Corrupt lines are skipped with a warning, never fatal.
    pub fn open(path: &Path) -> Result<Self, CacheError> {
        let mut index = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|source| CacheError::Open {
                path: path.to_path_buf(),
                source,
            })?;
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = match line {
                    Ok(l) => l,
                    Err(e) => {
                        log::warn!("cache {}: unreadable line {}: {e}", path.display(), idx + 1);
                        continue;
                    }
                };
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<VlmExchange>(&line) {
                    Ok(exchange) => {
                        // Later lines for the same digest win.
                        index.insert(exchange.digest.clone(), exchange);
                    }
                    Err(e) => {
                        log::warn!("cache {}: skipping corrupt line {}: {e}", path.display(), idx + 1);
                    }
                }
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            inner: Mutex::new(Inner {
                index,
                writer: None,
            }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The most recent stored exchange for this digest, if any.
    pub fn lookup(&self, digest: &str) -> Option<VlmExchange> {
        self.inner.lock().unwrap().index.get(digest).cloned()
    }

    /// Appends one exchange and updates the in-memory index.
    pub fn store(&self, exchange: &VlmExchange) -> Result<(), CacheError> {
        let line = serde_json::to_string(exchange)?;
        let mut inner = self.inner.lock().unwrap();
        if inner.writer.is_none() {
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.path)
                .map_err(|source| CacheError::Open {
                    path: self.path.clone(),
                    source,
                })?;
            inner.writer = Some(file);
        }
        let writer = inner.writer.as_mut().expect("writer just initialized");
        writeln!(writer, "{line}").map_err(|source| CacheError::Append {
            path: self.path.clone(),
            source,
        })?;
        writer.flush().map_err(|source| CacheError::Append {
            path: self.path.clone(),
            source,
        })?;
        inner.index.insert(exchange.digest.clone(), exchange.clone());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::{VlmFailure, VlmOutcome};
    use super::*;

    fn exchange(digest: &str, text: &str) -> VlmExchange {
        VlmExchange {
            digest: digest.to_string(),
            backend: "mock".to_string(),
            model: String::new(),
            prompt: "How many?".to_string(),
            image_id: "img".to_string(),
            outcome: VlmOutcome::Response(text.to_string()),
            latency_ms: 3,
            timestamp: "2024-01-01T00:00:00Z".to_string(),
        }
    }

    #[test]
    fn store_then_lookup_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ExchangeCache::open(&dir.path().join("cache.jsonl")).unwrap();
        assert!(cache.lookup("d1").is_none());
        let e = exchange("d1", "two planes");
        cache.store(&e).unwrap();
        assert_eq!(cache.lookup("d1"), Some(e));
    }

    #[test]
    fn last_write_wins_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let cache = ExchangeCache::open(&path).unwrap();
            cache.store(&exchange("d1", "first")).unwrap();
            cache.store(&exchange("d1", "second")).unwrap();
            match cache.lookup("d1").unwrap().outcome {
                VlmOutcome::Response(text) => assert_eq!(text, "second"),
                other => panic!("unexpected outcome {other:?}"),
            }
        }
        let reopened = ExchangeCache::open(&path).unwrap();
        match reopened.lookup("d1").unwrap().outcome {
            VlmOutcome::Response(text) => assert_eq!(text, "second"),
            other => panic!("unexpected outcome {other:?}"),
        }
    }

    #[test]
    fn corrupt_lines_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let good = serde_json::to_string(&exchange("d1", "ok")).unwrap();
        std::fs::write(&path, format!("{good}\nnot json at all\n{{\"partial\":1}}\n")).unwrap();
        let cache = ExchangeCache::open(&path).unwrap();
        assert_eq!(cache.len(), 1);
        assert!(cache.lookup("d1").is_some());
    }

    #[test]
    fn failures_round_trip_too() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ExchangeCache::open(&dir.path().join("cache.jsonl")).unwrap();
        let e = VlmExchange {
            outcome: VlmOutcome::Failure(VlmFailure {
                category: super::super::FailureCategory::Timeout,
                detail: "deadline exceeded".to_string(),
            }),
            ..exchange("d2", "")
        };
        cache.store(&e).unwrap();
        assert_eq!(cache.lookup("d2"), Some(e));
    }
}
