//! Read-through embedding cache.
//!
//! One JSON object per line: `{"hash": "<sha256 of the text>", "vector":
//! [...]}`. The whole file is loaded up front; lookups are by content hash.
//! With a fallback endpoint configured, misses are fetched remotely and
//! appended to the file, so a run warms the cache for the next one. Reads
//! are lock-free after load; writes are serialized.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{content_hash, remote::RemoteEmbedder, EmbedError};

#[derive(Serialize, Deserialize)]
struct CacheLine {
    hash: String,
    vector: Vec<f32>,
}

pub(super) struct CacheEmbedder {
    entries: RwLock<HashMap<String, Vec<f32>>>,
    writer: Mutex<File>,
    fallback: Option<RemoteEmbedder>,
}

impl CacheEmbedder {
    pub(super) fn open(
        path: PathBuf,
        fallback: Option<RemoteEmbedder>,
    ) -> Result<Self, EmbedError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: CacheLine =
                    serde_json::from_str(&line).map_err(|_| EmbedError::CacheCorrupt {
                        path: path.clone(),
                        line: idx + 1,
                    })?;
                entries.insert(parsed.hash, parsed.vector);
            }
        }
        let writer = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            entries: RwLock::new(entries),
            writer: Mutex::new(writer),
            fallback,
        })
    }

    pub(super) fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        let key = content_hash(text);
        if let Some(hit) = self.entries.read().expect("cache poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let Some(remote) = &self.fallback else {
            return Err(EmbedError::CacheMiss(key));
        };
        let fetched = remote
            .embed_chunk(std::slice::from_ref(&text.to_owned()))?
            .remove(0);
        {
            let mut writer = self.writer.lock().expect("cache writer poisoned");
            let line = serde_json::to_string(&CacheLine {
                hash: key.clone(),
                vector: fetched.clone(),
            })
            .map_err(|e| EmbedError::Io(std::io::Error::other(e)))?;
            writer.write_all(line.as_bytes())?;
            writer.write_all(b"\n")?;
            writer.flush()?;
        }
        self.entries
            .write()
            .expect("cache poisoned")
            .insert(key, fetched.clone());
        Ok(fetched)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{EmbedBackendKind, Embedder, EmbedderConfig};
    use super::*;

    fn cache_config(path: PathBuf, dim: usize) -> EmbedderConfig {
        let mut cfg = EmbedderConfig::hash_test(dim, 0);
        cfg.backend = EmbedBackendKind::Cache;
        cfg.cache_path = Some(path);
        cfg.normalize = false;
        cfg
    }

    #[test]
    fn hits_come_from_the_file_and_misses_fail_without_fallback() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let known = CacheLine {
            hash: content_hash("known text"),
            vector: vec![0.5, -0.5, 0.25],
        };
        std::fs::write(&path, format!("{}\n", serde_json::to_string(&known).unwrap())).unwrap();

        let embedder = Embedder::from_config(&cache_config(path, 3)).unwrap();
        assert_eq!(embedder.embed_text("known text").unwrap(), vec![0.5, -0.5, 0.25]);
        assert!(matches!(
            embedder.embed_text("unknown text"),
            Err(EmbedError::CacheMiss(_))
        ));
    }

    #[test]
    fn corrupt_cache_lines_are_reported_with_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        std::fs::write(&path, "{\"hash\":\"ok\",\"vector\":[1.0]}\nnot json\n").unwrap();
        match Embedder::from_config(&cache_config(path, 1)) {
            Err(EmbedError::CacheCorrupt { line, .. }) => assert_eq!(line, 2),
            Err(other) => panic!("expected CacheCorrupt, got {other:?}"),
            Ok(_) => panic!("expected CacheCorrupt, got an embedder"),
        }
    }

    #[test]
    fn cached_vector_dimension_is_still_validated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let short = CacheLine {
            hash: content_hash("text"),
            vector: vec![1.0],
        };
        std::fs::write(&path, format!("{}\n", serde_json::to_string(&short).unwrap())).unwrap();
        let embedder = Embedder::from_config(&cache_config(path, 4)).unwrap();
        assert!(matches!(
            embedder.embed_text("text"),
            Err(EmbedError::DimensionMismatch { expected: 4, got: 1 })
        ));
    }
}
