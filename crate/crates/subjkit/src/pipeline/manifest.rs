//! Run provenance.
//!
//! Every run directory carries a manifest recording what ran, over which
//! inputs (by content digest), and how it ended. The manifest is written
//! when the run starts and rewritten once at the end, so a crash leaves
//! a readable `started` manifest behind.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Started,
    Completed,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    pub crate_version: String,
    pub started_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// The exact configuration the run executed, minus any secrets, which
    /// never enter this struct in the first place.
    pub config: ExperimentConfig,
    /// Input label to SHA-256 of the file contents.
    pub inputs: BTreeMap<String, String>,
    /// Stage name to item count, for quick sanity reads.
    pub stage_counts: BTreeMap<String, u64>,
    /// Files this run wrote into its directory, relative names. No other
    /// manifest references them; run directories are never shared.
    #[serde(default)]
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn started(run_id: String, config_hash: String, config: ExperimentConfig) -> Self {
        Self {
            run_id,
            config_hash,
            crate_version: env!("CARGO_PKG_VERSION").to_owned(),
            started_at: now_rfc3339(),
            finished_at: None,
            status: RunStatus::Started,
            error: None,
            config,
            inputs: BTreeMap::new(),
            stage_counts: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn record_output(&mut self, name: &str) {
        self.outputs.push(name.to_owned());
    }

    pub fn complete(&mut self) {
        self.status = RunStatus::Completed;
        self.finished_at = Some(now_rfc3339());
    }

    pub fn fail(&mut self, error: String) {
        self.status = RunStatus::Failed;
        self.error = Some(error);
        self.finished_at = Some(now_rfc3339());
    }

    pub fn count(&mut self, stage: &str, n: u64) {
        self.stage_counts.insert(stage.to_owned(), n);
    }

    pub fn write_to(&self, path: &Path) -> Result<(), PipelineError> {
        let mut file = File::create(path)?;
        serde_json::to_writer_pretty(&mut file, self)
            .map_err(|e| PipelineError::Config(format!("serialize manifest: {e}")))?;
        file.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self, PipelineError> {
        let file = File::open(path)?;
        serde_json::from_reader(BufReader::new(file))
            .map_err(|e| PipelineError::Config(format!("manifest {}: {e}", path.display())))
    }
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// SHA-256 of a file's bytes, streamed.
pub fn input_digest(path: &Path) -> std::io::Result<String> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_matches_known_sha256() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("input.txt");
        std::fs::write(&path, b"abc").unwrap();
        assert_eq!(
            input_digest(&path).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_round_trips_and_tracks_lifecycle() {
        let dir = tempfile::tempdir().unwrap();
        let train = dir.path().join("t.jsonl");
        std::fs::write(&train, "\n").unwrap();

        let toml = format!(
            "[paths]\ntrain = {train:?}\ntest = {train:?}\n\
             [embedder]\nbackend = \"hash-test\"\ndim = 8\nseed = 1\n\
             [client]\nbackend = \"mock\"\n\
             [method]\nkind = \"zero\"\n\
             [mapping]\nenabled = false\n"
        );
        let cfg = ExperimentConfig::from_toml_str(&toml).unwrap();
        let mut manifest = RunManifest::started("run-x".to_owned(), "abc123".to_owned(), cfg);
        manifest.count("train_records", 10);
        assert_eq!(manifest.status, RunStatus::Started);
        assert!(manifest.finished_at.is_none());

        manifest.complete();
        assert_eq!(manifest.status, RunStatus::Completed);
        assert!(manifest.finished_at.is_some());

        let path = dir.path().join("manifest.json");
        manifest.write_to(&path).unwrap();
        let back = RunManifest::read_from(&path).unwrap();
        assert_eq!(back.run_id, "run-x");
        assert_eq!(back.stage_counts["train_records"], 10);
        assert_eq!(back.status, RunStatus::Completed);
        assert_eq!(back.crate_version, env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn failure_records_the_error() {
        let dir = tempfile::tempdir().unwrap();
        let train = dir.path().join("t.jsonl");
        std::fs::write(&train, "\n").unwrap();
        let toml = format!(
            "[paths]\ntrain = {train:?}\ntest = {train:?}\n\
             [embedder]\nbackend = \"hash-test\"\ndim = 8\nseed = 1\n\
             [client]\nbackend = \"mock\"\n\
             [method]\nkind = \"zero\"\n\
             [mapping]\nenabled = false\n"
        );
        let cfg = ExperimentConfig::from_toml_str(&toml).unwrap();
        let mut manifest = RunManifest::started("run-y".to_owned(), "def".to_owned(), cfg);
        manifest.fail("backend unreachable".to_owned());
        assert_eq!(manifest.status, RunStatus::Failed);
        assert_eq!(manifest.error.as_deref(), Some("backend unreachable"));
    }
}
