//! HTTP embedding backend.
//!
//! Wire shape: `POST {endpoint}` with `{"texts": [...]}`, answered by
//! `{"vectors": [[...]], "dim": n}`. Transient failures (transport errors,
//! 429, 5xx) are retried with exponential backoff; anything else fails fast.
//! Responses are memoized in-process by content hash, so re-embedding the
//! same text never repeats a request.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::Deserialize;

use super::{content_hash, EmbedError, EmbedderConfig};

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
    #[allow(dead_code)]
    dim: Option<usize>,
}

pub(super) struct RemoteEmbedder {
    endpoint: String,
    agent: ureq::Agent,
    retries: u32,
    backoff_ms: u64,
    memo: Mutex<HashMap<String, Vec<f32>>>,
}

impl RemoteEmbedder {
    pub(super) fn new(endpoint: String, cfg: &EmbedderConfig) -> Self {
        let agent_cfg = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_s)))
            .build();
        Self {
            endpoint,
            agent: agent_cfg.into(),
            retries: cfg.retries,
            backoff_ms: cfg.backoff_ms,
            memo: Mutex::new(HashMap::new()),
        }
    }

    pub(super) fn embed_chunk(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let keys: Vec<String> = texts.iter().map(|t| content_hash(t)).collect();
        let mut missing: Vec<&String> = Vec::new();
        {
            let memo = self.memo.lock().expect("memo poisoned");
            for (text, key) in texts.iter().zip(&keys) {
                if !memo.contains_key(key) && !missing.iter().any(|m| *m == text) {
                    missing.push(text);
                }
            }
        }

        if !missing.is_empty() {
            let fetched = self.request(&missing)?;
            if fetched.len() != missing.len() {
                return Err(EmbedError::BackendUnavailable(format!(
                    "service returned {} vectors for {} texts",
                    fetched.len(),
                    missing.len()
                )));
            }
            let mut memo = self.memo.lock().expect("memo poisoned");
            for (text, vector) in missing.iter().zip(fetched) {
                memo.insert(content_hash(text), vector);
            }
        }

        let memo = self.memo.lock().expect("memo poisoned");
        Ok(keys
            .iter()
            .map(|k| memo.get(k).expect("filled above").clone())
            .collect())
    }

    fn request(&self, texts: &[&String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let payload = serde_json::json!({ "texts": texts });
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let result = self
                .agent
                .post(&self.endpoint)
                .send_json(&payload);
            match result {
                Ok(mut response) => {
                    let parsed: EmbedResponse =
                        response.body_mut().read_json().map_err(|e| {
                            EmbedError::BackendUnavailable(format!("bad response body: {e}"))
                        })?;
                    return Ok(parsed.vectors);
                }
                Err(err) if attempt <= self.retries && is_transient(&err) => {
                    let wait = self.backoff_ms.saturating_mul(1 << (attempt - 1));
                    std::thread::sleep(Duration::from_millis(wait));
                }
                Err(err) => {
                    return Err(EmbedError::BackendUnavailable(err.to_string()));
                }
            }
        }
    }
}

fn is_transient(err: &ureq::Error) -> bool {
    match err {
        ureq::Error::StatusCode(code) => *code == 429 || *code >= 500,
        ureq::Error::Timeout(_) | ureq::Error::Io(_) | ureq::Error::ConnectionFailed => true,
        _ => false,
    }
}
