//! Text embedding behind a single façade with three interchangeable
//! backends: a remote HTTP service, a read-through file cache, and a seeded
//! hashing embedder that needs no network and is bitwise reproducible.

mod cache;
mod hash;
mod remote;

pub use hash::{fnv1a64, splitmix64};

use std::io::{BufRead, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use cache::CacheEmbedder;
use hash::HashEmbedder;
use remote::RemoteEmbedder;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("text is empty or contains no tokens after cleaning")]
    EmptyText,
    #[error("backend returned a vector of dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("cache has no entry for text with hash {0} and no fallback endpoint is configured")]
    CacheMiss(String),
    #[error("backend returned a non-finite vector component")]
    NonFinite,
    #[error("cache file {path}, line {line}: not a valid cache entry")]
    CacheCorrupt { path: PathBuf, line: usize },
    #[error("invalid embedder config: {0}")]
    Config(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedBackendKind {
    Remote,
    Cache,
    HashTest,
}

fn default_true() -> bool {
    true
}

fn default_chunk() -> usize {
    64
}

fn default_retries() -> u32 {
    2
}

fn default_backoff_ms() -> u64 {
    250
}

fn default_timeout_s() -> u64 {
    30
}

/// Declarative embedder selection, loadable from TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderConfig {
    pub backend: EmbedBackendKind,
    pub dim: usize,
    /// L2-normalize remote and cached vectors. The hashing backend always
    /// normalizes; that is part of its recipe.
    #[serde(default = "default_true")]
    pub normalize: bool,
    /// Seed for the hashing backend.
    #[serde(default)]
    pub seed: u64,
    /// Remote service URL; also the fallback for cache misses when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_path: Option<PathBuf>,
    /// Batch requests are issued in chunks of this many texts.
    #[serde(default = "default_chunk")]
    pub chunk_size: usize,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
}

impl EmbedderConfig {
    /// A reproducible, network-free embedder; the workhorse of tests and the
    /// default for desk-scale experiments.
    pub fn hash_test(dim: usize, seed: u64) -> Self {
        Self {
            backend: EmbedBackendKind::HashTest,
            dim,
            normalize: true,
            seed,
            endpoint: None,
            cache_path: None,
            chunk_size: default_chunk(),
            retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            timeout_s: default_timeout_s(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, EmbedError> {
        toml::from_str(s).map_err(|e| EmbedError::Config(e.to_string()))
    }

    pub fn from_toml_path(path: &std::path::Path) -> Result<Self, EmbedError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

enum Backend {
    Hash(HashEmbedder),
    Remote(RemoteEmbedder),
    Cache(CacheEmbedder),
}

/// Embeds texts into fixed-dimension f32 vectors.
pub struct Embedder {
    backend: Backend,
    dim: usize,
    normalize: bool,
    chunk_size: usize,
}

impl Embedder {
    pub fn from_config(cfg: &EmbedderConfig) -> Result<Self, EmbedError> {
        if cfg.dim == 0 {
            return Err(EmbedError::Config("dim must be at least 1".into()));
        }
        if cfg.chunk_size == 0 {
            return Err(EmbedError::Config("chunk_size must be at least 1".into()));
        }
        let backend = match cfg.backend {
            EmbedBackendKind::HashTest => Backend::Hash(HashEmbedder::new(cfg.dim, cfg.seed)),
            EmbedBackendKind::Remote => {
                let endpoint = cfg.endpoint.clone().ok_or_else(|| {
                    EmbedError::Config("remote backend requires an endpoint".into())
                })?;
                Backend::Remote(RemoteEmbedder::new(endpoint, cfg))
            }
            EmbedBackendKind::Cache => {
                let path = cfg.cache_path.clone().ok_or_else(|| {
                    EmbedError::Config("cache backend requires cache_path".into())
                })?;
                let fallback = cfg
                    .endpoint
                    .clone()
                    .map(|endpoint| RemoteEmbedder::new(endpoint, cfg));
                Backend::Cache(CacheEmbedder::open(path, fallback)?)
            }
        };
        Ok(Self {
            backend,
            dim: cfg.dim,
            normalize: cfg.normalize,
            chunk_size: cfg.chunk_size,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed_text(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        let batch = self.embed_batch(std::slice::from_ref(&text.to_owned()))?;
        Ok(batch.into_iter().next().expect("one text in, one vector out"))
    }

    /// Embeds in input order. Results are identical regardless of chunk
    /// size; chunking only shapes the remote requests.
    pub fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        for text in texts {
            if text.trim().is_empty() {
                return Err(EmbedError::EmptyText);
            }
        }
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.chunk_size) {
            let vectors = match &self.backend {
                Backend::Hash(h) => chunk.iter().map(|t| h.embed(t)).collect::<Result<_, _>>()?,
                Backend::Cache(c) => chunk.iter().map(|t| c.embed(t)).collect::<Result<_, _>>()?,
                Backend::Remote(r) => r.embed_chunk(chunk)?,
            };
            for mut v in vectors {
                self.check(&v)?;
                if self.normalize {
                    normalize_in_place(&mut v);
                }
                out.push(v);
            }
        }
        Ok(out)
    }

    fn check(&self, v: &[f32]) -> Result<(), EmbedError> {
        if v.len() != self.dim {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(())
    }
}

fn normalize_in_place(v: &mut [f32]) {
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x = (f64::from(*x) / norm) as f32;
        }
    }
}

/// Hex SHA-256 of a text, the content key used by the cache backend and the
/// remote memo.
pub fn content_hash(text: &str) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// One embedded record, as written by the `embed` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddedRecord {
    pub id: String,
    pub vector: Vec<f32>,
}

pub fn write_vectors_jsonl<W: Write>(
    mut w: W,
    records: &[EmbeddedRecord],
) -> std::io::Result<()> {
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_vectors_jsonl<R: BufRead>(r: R) -> Result<Vec<EmbeddedRecord>, EmbedError> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddedRecord = serde_json::from_str(&line)
            .map_err(|e| EmbedError::Config(format!("vectors line {}: {e}", idx + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
