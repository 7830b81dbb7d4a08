//! The experiment runner.
//!
//! A run owns a fresh directory named after the config digest and wall
//! clock, writes a `started` manifest, executes the stages, and finishes
//! by rewriting the manifest as `completed` or `failed`. Artifacts in the
//! directory are never rewritten by later runs; re-running the same
//! config produces a sibling directory with identical artifact bytes
//! whenever the configured backends are deterministic.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::count::{
    fit_ridge, load_count_model, predict_count, save_count_model, tune_lambda, CountModel,
};
use crate::embed::Embedder;
use crate::eval::{compare_runs, eval_corpus, eval_sample, CorpusReport, RunComparison};
use crate::ingest::{read_bib_jsonl, BibRecord};
use crate::llm::{
    run_constrained, run_cot, run_few_shot, run_zero_shot, ChatClient, ChatClientKind,
    GenerationTrace, PromptTemplates,
};
use crate::vocab::{build_index, load_vocabulary, VocabIndex};

use super::config::{validate_config, ExperimentConfig, MethodKind};
use super::manifest::{input_digest, RunManifest};
use super::PipelineError;

pub struct RunArtifacts {
    pub run_dir: PathBuf,
    pub manifest: RunManifest,
    pub report_raw: CorpusReport,
    /// Present when the mapping stage ran.
    pub report_mapped: Option<CorpusReport>,
    pub comparison: Option<RunComparison>,
}

/// First 12 hex digits of the SHA-256 of the config's canonical JSON form.
pub(crate) fn config_digest(cfg: &ExperimentConfig) -> Result<String, PipelineError> {
    let json = serde_json::to_string(cfg)
        .map_err(|e| PipelineError::Config(format!("serialize config: {e}")))?;
    let full = hex::encode(Sha256::digest(json.as_bytes()));
    Ok(full[..12].to_owned())
}

/// Creates `out_dir/run-<digest>-<timestamp>`, suffixing `-2`, `-3`, ... on
/// collision so an existing run directory is never reused or overwritten.
fn claim_run_dir(out_dir: &Path, digest: &str) -> Result<(String, PathBuf), PipelineError> {
    std::fs::create_dir_all(out_dir)?;
    let stamp = chrono::Utc::now().format("%Y%m%d%H%M%S");
    let base = format!("run-{digest}-{stamp}");
    let mut candidate = base.clone();
    let mut suffix = 1u32;
    loop {
        let dir = out_dir.join(&candidate);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok((candidate, dir)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                suffix += 1;
                candidate = format!("{base}-{suffix}");
            }
            Err(e) => return Err(e.into()),
        }
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunArtifacts, PipelineError> {
    validate_config(cfg)?;
    let digest = config_digest(cfg)?;
    let (run_id, run_dir) = claim_run_dir(&cfg.paths.out_dir, &digest)?;

    let mut manifest = RunManifest::started(run_id, digest, cfg.clone());
    let manifest_path = run_dir.join("manifest.json");
    manifest.write_to(&manifest_path)?;

    match execute(cfg, &run_dir, &mut manifest) {
        Ok((report_raw, report_mapped, comparison)) => {
            manifest.complete();
            manifest.write_to(&manifest_path)?;
            Ok(RunArtifacts {
                run_dir,
                manifest,
                report_raw,
                report_mapped,
                comparison,
            })
        }
        Err(err) => {
            manifest.fail(err.to_string());
            manifest.write_to(&manifest_path)?;
            Err(err)
        }
    }
}

type StageOutput = (CorpusReport, Option<CorpusReport>, Option<RunComparison>);

fn execute(
    cfg: &ExperimentConfig,
    run_dir: &Path,
    manifest: &mut RunManifest,
) -> Result<StageOutput, PipelineError> {
    digest_inputs(cfg, manifest)?;

    let train = read_records(&cfg.paths.train)?;
    let test_all = read_records(&cfg.paths.test)?;
    let test: Vec<BibRecord> = test_all
        .iter()
        .filter(|r| !r.gold_headings.is_empty())
        .cloned()
        .collect();
    manifest.count("train_records", train.len() as u64);
    manifest.count("test_records", test_all.len() as u64);
    manifest.count("test_excluded_no_gold", (test_all.len() - test.len()) as u64);
    if test.is_empty() {
        return Err(PipelineError::Config(
            "no test records with gold headings to score".to_owned(),
        ));
    }

    let embedder = Embedder::from_config(&cfg.embedder).map_err(PipelineError::stage("embedder"))?;
    let templates = load_templates(cfg)?;
    let client = build_client(cfg)?;

    let count_model = if cfg.method.needs_count_model() {
        Some(obtain_count_model(cfg, &train, &embedder, run_dir, manifest)?)
    } else {
        None
    };

    let index = if cfg.mapping.enabled {
        Some(obtain_index(cfg, &embedder, run_dir, manifest)?)
    } else {
        None
    };

    let counts = predict_counts(cfg, count_model.as_ref(), &test, &embedder)?;
    let mut traces = generate_all(cfg, client.as_ref(), &templates, &train, &test, &counts)?;
    manifest.count(
        "rounds_total",
        traces.iter().map(|t| t.rounds.len() as u64).sum(),
    );

    if let Some(index) = &index {
        let (substitutions, diagnostics) = map_traces(cfg, index, &embedder, &mut traces)?;
        manifest.count("map_substitutions", substitutions);
        manifest.count("map_diagnostics", diagnostics);
    }

    write_jsonl(&run_dir.join("traces.jsonl"), &traces)?;
    manifest.record_output("traces.jsonl");
    write_predictions(&run_dir.join("raw_preds.jsonl"), &traces, |t| {
        &t.aggregated_raw
    })?;
    manifest.record_output("raw_preds.jsonl");

    let label = cfg.method.describe();
    let report_raw = score(&label, &test, &traces, |t| &t.aggregated_raw)?;
    write_json(&run_dir.join("report_raw.json"), &report_raw)?;
    manifest.record_output("report_raw.json");

    let (report_mapped, comparison) = if index.is_some() {
        write_predictions(&run_dir.join("mapped_preds.jsonl"), &traces, |t| {
            t.aggregated_mapped.as_ref().expect("mapped stage ran")
        })?;
        manifest.record_output("mapped_preds.jsonl");
        let mapped = score(&format!("{label}+map"), &test, &traces, |t| {
            t.aggregated_mapped.as_ref().expect("mapped stage ran")
        })?;
        write_json(&run_dir.join("report_mapped.json"), &mapped)?;
        manifest.record_output("report_mapped.json");

        let cmp = compare_runs(&report_raw, &mapped).map_err(PipelineError::stage("compare"))?;
        std::fs::write(run_dir.join("comparison.txt"), cmp.to_string())?;
        std::fs::write(run_dir.join("comparison.csv"), cmp.to_csv())?;
        write_json(&run_dir.join("comparison.json"), &cmp)?;
        manifest.record_output("comparison.txt");
        manifest.record_output("comparison.csv");
        manifest.record_output("comparison.json");
        (Some(mapped), Some(cmp))
    } else {
        (None, None)
    };

    manifest.count("scored_records", test.len() as u64);
    Ok((report_raw, report_mapped, comparison))
}

fn digest_inputs(cfg: &ExperimentConfig, manifest: &mut RunManifest) -> Result<(), PipelineError> {
    let mut labeled: Vec<(&str, &PathBuf)> = vec![
        ("train", &cfg.paths.train),
        ("test", &cfg.paths.test),
    ];
    if let Some(p) = &cfg.paths.vocabulary {
        labeled.push(("vocabulary", p));
    }
    if let Some(p) = &cfg.paths.count_model {
        labeled.push(("count_model", p));
    }
    if let Some(p) = &cfg.paths.index {
        labeled.push(("index", p));
    }
    for (label, path) in labeled {
        let digest = input_digest(path)?;
        manifest.inputs.insert(label.to_owned(), digest);
    }
    Ok(())
}

fn read_records(path: &Path) -> Result<Vec<BibRecord>, PipelineError> {
    let file = File::open(path)?;
    read_bib_jsonl(BufReader::new(file)).map_err(PipelineError::stage("read-records"))
}

fn load_templates(cfg: &ExperimentConfig) -> Result<PromptTemplates, PipelineError> {
    match &cfg.method.template_file {
        Some(path) => PromptTemplates::from_file(path).map_err(PipelineError::stage("templates")),
        None => Ok(PromptTemplates::builtin(cfg.method.template_variant()?)),
    }
}

/// Builds the chat client. `SUBJKIT_API_KEY` supplies the bearer token and
/// `SUBJKIT_ENDPOINT` may override the remote endpoint; neither value is
/// recorded anywhere.
fn build_client(cfg: &ExperimentConfig) -> Result<Box<dyn ChatClient>, PipelineError> {
    let mut client_cfg = cfg.client.clone();
    if client_cfg.backend == ChatClientKind::Remote {
        if let Ok(endpoint) = std::env::var("SUBJKIT_ENDPOINT") {
            client_cfg.endpoint = Some(endpoint);
        }
    }
    // The experiment seed reaches the derived mock unless one was pinned.
    if client_cfg.mock_seed.is_none() {
        client_cfg.mock_seed = Some(cfg.seed);
    }
    let api_key = std::env::var("SUBJKIT_API_KEY").ok();
    client_cfg
        .build(api_key)
        .map_err(PipelineError::stage("client"))
}

/// Loads the configured count model, or fits a ridge model on the training
/// records that carry gold headings and saves it into the run directory.
fn obtain_count_model(
    cfg: &ExperimentConfig,
    train: &[BibRecord],
    embedder: &Embedder,
    run_dir: &Path,
    manifest: &mut RunManifest,
) -> Result<CountModel, PipelineError> {
    if let Some(path) = &cfg.paths.count_model {
        return load_count_model(path).map_err(PipelineError::stage("count-model"));
    }

    let usable: Vec<&BibRecord> = train.iter().filter(|r| !r.gold_headings.is_empty()).collect();
    manifest.count("count_train_records", usable.len() as u64);
    let texts: Vec<String> = usable.iter().map(|r| r.text()).collect();
    let vectors = embedder
        .embed_batch(&texts)
        .map_err(PipelineError::stage("embed-train"))?;
    let x: Vec<Vec<f64>> = vectors
        .iter()
        .map(|row| row.iter().map(|&v| f64::from(v)).collect())
        .collect();
    let y: Vec<f64> = usable.iter().map(|r| r.gold_headings.len() as f64).collect();

    let lambda = if cfg.count.tune {
        let (best, _scores) = tune_lambda(&x, &y).map_err(PipelineError::stage("tune-count"))?;
        best
    } else {
        cfg.count.lambda
    };
    let model = CountModel::Ridge(
        fit_ridge(&x, &y, lambda).map_err(PipelineError::stage("fit-count"))?,
    );
    save_count_model(&run_dir.join("count_model.json"), &model)
        .map_err(PipelineError::stage("save-count"))?;
    manifest.record_output("count_model.json");
    Ok(model)
}

/// Loads the configured index, or embeds the vocabulary and builds one,
/// saving it into the run directory. The component count is clamped to
/// what the vocabulary size and embedding width admit.
fn obtain_index(
    cfg: &ExperimentConfig,
    embedder: &Embedder,
    run_dir: &Path,
    manifest: &mut RunManifest,
) -> Result<VocabIndex, PipelineError> {
    if let Some(path) = &cfg.paths.index {
        return VocabIndex::load(path).map_err(PipelineError::stage("index"));
    }

    let vocab_path = cfg.paths.vocabulary.as_ref().expect("validated");
    let terms = load_vocabulary(vocab_path).map_err(PipelineError::stage("vocabulary"))?;
    manifest.count("vocabulary_terms", terms.len() as u64);

    let k = cfg
        .index
        .k
        .min(terms.len().saturating_sub(1))
        .min(embedder.dim())
        .max(1);
    manifest.count("index_k", k as u64);

    let index = build_index(&terms, embedder, k, crate::vocab::Metric::Cosine)
        .map_err(PipelineError::stage("build-index"))?;
    index
        .save(&run_dir.join("vocab.idx"))
        .map_err(PipelineError::stage("save-index"))?;
    manifest.record_output("vocab.idx");
    Ok(index)
}

/// Predicted heading counts for each test record, in test order. Empty
/// when the method does not use counts.
fn predict_counts(
    cfg: &ExperimentConfig,
    model: Option<&CountModel>,
    test: &[BibRecord],
    embedder: &Embedder,
) -> Result<Vec<u32>, PipelineError> {
    let Some(model) = model else {
        return Ok(Vec::new());
    };
    let texts: Vec<String> = test.iter().map(|r| r.text()).collect();
    let vectors = embedder
        .embed_batch(&texts)
        .map_err(PipelineError::stage("embed-test"))?;
    vectors
        .iter()
        .map(|v| predict_count(model, v, cfg.count.cap).map_err(PipelineError::stage("predict-count")))
        .collect()
}

fn generate_all(
    cfg: &ExperimentConfig,
    client: &dyn ChatClient,
    templates: &PromptTemplates,
    train: &[BibRecord],
    test: &[BibRecord],
    counts: &[u32],
) -> Result<Vec<GenerationTrace>, PipelineError> {
    let exemplars: Vec<&BibRecord> = if cfg.method.kind == MethodKind::Few {
        let chosen: Vec<&BibRecord> = train
            .iter()
            .filter(|r| !r.gold_headings.is_empty())
            .take(cfg.method.exemplars)
            .collect();
        if chosen.is_empty() {
            return Err(PipelineError::Config(
                "few-shot needs training records with gold headings".to_owned(),
            ));
        }
        chosen
    } else {
        Vec::new()
    };

    let mut traces = Vec::with_capacity(test.len());
    for (i, record) in test.iter().enumerate() {
        let trace = match cfg.method.kind {
            MethodKind::Zero => run_zero_shot(client, templates, record, &cfg.params),
            MethodKind::Few => run_few_shot(client, templates, record, &exemplars, &cfg.params),
            MethodKind::Limit => {
                let quota = match cfg.method.limit {
                    Some(k) => k,
                    None => cfg.method.multiplier * counts[i],
                };
                run_constrained(client, templates, record, quota, &cfg.params)
            }
            MethodKind::Cot => {
                let plan = cfg.method.plan.as_ref().expect("validated");
                let n = counts.get(i).copied().unwrap_or(0);
                run_cot(client, templates, record, plan, n, &cfg.params)
            }
        };
        traces.push(trace.map_err(PipelineError::stage("generate"))?);
    }
    Ok(traces)
}

fn map_traces(
    cfg: &ExperimentConfig,
    index: &VocabIndex,
    embedder: &Embedder,
    traces: &mut [GenerationTrace],
) -> Result<(u64, u64), PipelineError> {
    let mut substitutions = 0u64;
    let mut diagnostics = 0u64;
    for trace in traces.iter_mut() {
        let outcome = index
            .map_terms_within(&trace.aggregated_raw, embedder, cfg.mapping.max_distance)
            .map_err(PipelineError::stage("map"))?;
        substitutions += outcome.terms.iter().filter(|t| t.was_substituted).count() as u64;
        diagnostics += outcome.diagnostics.len() as u64;
        trace.aggregated_mapped = Some(outcome.terms.into_iter().map(|t| t.mapped).collect());
    }
    Ok((substitutions, diagnostics))
}

fn score<'a, F>(
    label: &str,
    test: &[BibRecord],
    traces: &'a [GenerationTrace],
    predictions: F,
) -> Result<CorpusReport, PipelineError>
where
    F: Fn(&'a GenerationTrace) -> &'a Vec<String>,
{
    let mut samples = Vec::with_capacity(test.len());
    for (record, trace) in test.iter().zip(traces) {
        samples.push(
            eval_sample(&record.id, &record.gold_headings, predictions(trace))
                .map_err(PipelineError::stage("evaluate"))?,
        );
    }
    eval_corpus(label, samples).map_err(PipelineError::stage("evaluate"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value)
        .map_err(|e| PipelineError::Config(format!("serialize {}: {e}", path.display())))?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let mut file = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut file, item)
            .map_err(|e| PipelineError::Config(format!("serialize {}: {e}", path.display())))?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    id: &'a str,
    labels: &'a [String],
}

fn write_predictions<F>(
    path: &Path,
    traces: &[GenerationTrace],
    labels: F,
) -> Result<(), PipelineError>
where
    F: for<'a> Fn(&'a GenerationTrace) -> &'a Vec<String>,
{
    let mut file = BufWriter::new(File::create(path)?);
    for trace in traces {
        let line = PredictionLine {
            id: &trace.record_id,
            labels: labels(trace),
        };
        serde_json::to_writer(&mut file, &line)
            .map_err(|e| PipelineError::Config(format!("serialize {}: {e}", path.display())))?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}
