//! Command-line surface over the subjkit library.
//!
//! Each subcommand wraps one pipeline stage; `run` executes the whole
//! pipeline from a single config file. Exit codes: 0 success, 2 config
//! error, 3 data error, 4 backend error.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use subjkit::count::{
    evaluate_counts, fit_knn_count, fit_ridge, load_count_model, predict_count, save_count_model,
    tune_lambda, CountModel, DEFAULT_COUNT_CAP, DEFAULT_LAMBDA,
};
use subjkit::embed::{read_vectors_jsonl, EmbedError, Embedder, EmbedderConfig, EmbeddedRecord};
use subjkit::eval::{compare_runs, eval_corpus, eval_sample, CorpusReport};
use subjkit::ingest::{ingest_path, read_bib_jsonl, stratified_split, write_bib_jsonl, BibRecord};
use subjkit::llm::{
    export_finetune_dataset, run_constrained, run_cot, run_few_shot, run_zero_shot,
    ChatClientConfig, GenerationParams, GenerationTrace, LlmError, PromptTemplates, RoundPlan,
};
use subjkit::pipeline::{run_experiment, ExperimentConfig, PipelineError};
use subjkit::vocab::{build_index, load_vocabulary, Metric, VocabIndex};

#[derive(Parser)]
#[command(
    name = "subjkit",
    version,
    about = "Subject-heading prediction pipeline: ingest, embed, generate, map, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse bibliographic record files into a clean JSONL corpus.
    Ingest(IngestArgs),
    /// Stratified train/test split by classification letter.
    Split(SplitArgs),
    /// Embed record texts into vectors.
    Embed(EmbedArgs),
    /// Fit a heading-count model from embeddings.
    TrainCount(TrainCountArgs),
    /// Score a count model against gold heading counts.
    EvalCount(EvalCountArgs),
    /// Build the vocabulary nearest-neighbor index.
    BuildIndex(BuildIndexArgs),
    /// Generate subject headings with an LLM backend.
    Generate(GenerateArgs),
    /// Map predicted headings onto the vocabulary.
    Map(MapArgs),
    /// Score predictions against gold headings.
    Evaluate(EvaluateArgs),
    /// Compare two evaluation reports.
    Compare(CompareArgs),
    /// Run the full pipeline from one config file.
    Run(RunArgs),
    /// Export a supervised fine-tuning dataset.
    ExportFinetune(ExportFinetuneArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Input files (.mrc binary or .jsonl line format), repeatable.
    #[arg(long = "in", required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Write parse diagnostics as JSON lines.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Test records sampled per classification letter.
    #[arg(long)]
    quota: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Split membership file (id lists).
    #[arg(long)]
    out: PathBuf,
    /// Also write the train records here.
    #[arg(long)]
    train_out: Option<PathBuf>,
    /// Also write the test records here.
    #[arg(long)]
    test_out: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    /// Embedder config, TOML.
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainCountArgs {
    /// Vectors JSONL produced by `embed`.
    #[arg(long)]
    vectors: PathBuf,
    /// Records supplying the gold heading counts.
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Pick the ridge penalty by cross-validation.
    #[arg(long)]
    tune: bool,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    /// Fit a k-nearest-neighbor model instead of ridge.
    #[arg(long)]
    knn: Option<usize>,
}

#[derive(Args)]
struct EvalCountArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vectors: PathBuf,
    #[arg(long)]
    records: PathBuf,
    #[arg(long, default_value_t = DEFAULT_COUNT_CAP)]
    cap: u32,
}

#[derive(Args)]
struct BuildIndexArgs {
    /// Vocabulary file: one term per line, or binary records.
    #[arg(long)]
    vocab: PathBuf,
    /// Embedder config, TOML.
    #[arg(long)]
    embed: PathBuf,
    /// Reduced dimensionality.
    #[arg(long, default_value_t = 50)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    /// zero | few | limit | limit<N> | cot
    #[arg(long)]
    method: String,
    /// Round schedule for cot, e.g. "n/n/2n".
    #[arg(long)]
    plan: Option<RoundPlan>,
    #[arg(long)]
    records: PathBuf,
    /// Count model; needed when the method scales with the predicted count.
    #[arg(long)]
    count_model: Option<PathBuf>,
    /// Embedder config; needed alongside --count-model.
    #[arg(long)]
    embed: Option<PathBuf>,
    /// Chat client config, TOML.
    #[arg(long)]
    client: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write full per-round traces.
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Records supplying few-shot exemplars.
    #[arg(long)]
    exemplars_from: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    exemplars: usize,
    /// Prompt wording variant.
    #[arg(long, default_value = "v2")]
    variant: String,
    /// Custom prompt file overriding --variant.
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long, default_value_t = 0.7)]
    temperature: f64,
    #[arg(long, default_value_t = 150)]
    max_new_tokens: u32,
    #[arg(long)]
    seed: Option<u64>,
    /// Cap on predicted counts.
    #[arg(long, default_value_t = DEFAULT_COUNT_CAP)]
    cap: u32,
    /// Scales the predicted count for `limit`.
    #[arg(long, default_value_t = 1)]
    multiplier: u32,
}

#[derive(Args)]
struct MapArgs {
    #[arg(long)]
    index: PathBuf,
    /// Embedder config used to embed out-of-vocabulary terms.
    #[arg(long)]
    embed: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Substitutions farther than this pass through unchanged.
    #[arg(long)]
    max_distance: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predictions JSONL: {"id", "labels"} per line.
    #[arg(long)]
    preds: PathBuf,
    #[arg(long)]
    records: PathBuf,
    /// Method label stored in the report.
    #[arg(long)]
    label: String,
    /// Report JSON destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    before: PathBuf,
    #[arg(long)]
    after: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config, TOML.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct ExportFinetuneArgs {
    #[arg(long)]
    records: PathBuf,
    /// JSONL destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "v2")]
    variant: String,
    #[arg(long)]
    template: Option<PathBuf>,
}

/// One prediction line, shared by `generate`, `map`, and `evaluate`.
#[derive(Serialize, Deserialize)]
struct PredLine {
    id: String,
    labels: Vec<String>,
}

enum Failure {
    Config(String),
    Data(String),
    Backend(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) => 3,
            Self::Backend(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Config(m) | Self::Data(m) | Self::Backend(m) => m,
        }
    }
}

type CliResult = Result<(), Failure>;

fn config_err<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Config(e.to_string())
}

fn data_err<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Data(e.to_string())
}

fn classify_embed(e: &EmbedError) -> Failure {
    let msg = e.to_string();
    match e {
        EmbedError::BackendUnavailable(_) => Failure::Backend(msg),
        EmbedError::Config(_) => Failure::Config(msg),
        _ => Failure::Data(msg),
    }
}

fn classify_llm(e: &LlmError) -> Failure {
    let msg = e.to_string();
    match e {
        LlmError::RateLimited { .. } | LlmError::Backend(_) | LlmError::ScriptExhausted(_) => {
            Failure::Backend(msg)
        }
        LlmError::InvalidRequest(_)
        | LlmError::InvalidParams(_)
        | LlmError::InvalidPlan(_)
        | LlmError::Template(_) => Failure::Config(msg),
        LlmError::RoundFailed { source, .. } => match classify_llm(source) {
            Failure::Backend(_) => Failure::Backend(msg),
            Failure::Config(_) => Failure::Config(msg),
            Failure::Data(_) => Failure::Data(msg),
        },
        LlmError::Io(_) => Failure::Data(msg),
    }
}

fn classify_pipeline(e: &PipelineError) -> Failure {
    let msg = e.to_string();
    match e {
        PipelineError::Config(_) => Failure::Config(msg),
        PipelineError::Io(_) => Failure::Data(msg),
        PipelineError::Stage { source, .. } => {
            if let Some(le) = source.downcast_ref::<LlmError>() {
                match classify_llm(le) {
                    Failure::Backend(_) => Failure::Backend(msg),
                    Failure::Config(_) => Failure::Config(msg),
                    Failure::Data(_) => Failure::Data(msg),
                }
            } else if let Some(ee) = source.downcast_ref::<EmbedError>() {
                match classify_embed(ee) {
                    Failure::Backend(_) => Failure::Backend(msg),
                    Failure::Config(_) => Failure::Config(msg),
                    Failure::Data(_) => Failure::Data(msg),
                }
            } else {
                Failure::Data(msg)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}

fn dispatch(command: Command) -> CliResult {
    match command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Split(args) => cmd_split(args),
        Command::Embed(args) => cmd_embed(args),
        Command::TrainCount(args) => cmd_train_count(args),
        Command::EvalCount(args) => cmd_eval_count(args),
        Command::BuildIndex(args) => cmd_build_index(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Map(args) => cmd_map(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Run(args) => cmd_run(args),
        Command::ExportFinetune(args) => cmd_export_finetune(args),
    }
}

fn open_reader(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn create_writer(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn read_records(path: &Path) -> Result<Vec<BibRecord>, Failure> {
    read_bib_jsonl(open_reader(path)?).map_err(data_err)
}

fn load_embedder(path: &Path) -> Result<Embedder, Failure> {
    // A config file that cannot be read or parsed is a config error, not data.
    let cfg = EmbedderConfig::from_toml_path(path)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    Embedder::from_config(&cfg).map_err(|e| classify_embed(&e))
}

fn load_templates(variant: &str, template: Option<&Path>) -> Result<PromptTemplates, Failure> {
    match template {
        Some(path) => PromptTemplates::from_file(path).map_err(config_err),
        None => Ok(PromptTemplates::builtin(
            variant.parse().map_err(config_err)?,
        )),
    }
}

fn read_pred_lines(path: &Path) -> Result<Vec<PredLine>, Failure> {
    let mut out = Vec::new();
    let mut text = String::new();
    open_reader(path)?
        .read_to_string(&mut text)
        .map_err(data_err)?;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: PredLine = serde_json::from_str(line)
            .map_err(|e| Failure::Data(format!("{} line {}: {e}", path.display(), idx + 1)))?;
        out.push(parsed);
    }
    Ok(out)
}

fn write_pred_lines(path: &Path, lines: &[PredLine]) -> CliResult {
    let mut w = create_writer(path)?;
    for line in lines {
        let json = serde_json::to_string(line).map_err(data_err)?;
        w.write_all(json.as_bytes()).map_err(data_err)?;
        w.write_all(b"\n").map_err(data_err)?;
    }
    w.flush().map_err(data_err)
}

fn cmd_ingest(args: IngestArgs) -> CliResult {
    let mut all = Vec::new();
    let mut diagnostics: Vec<(String, String)> = Vec::new();
    let mut skipped = 0usize;
    let mut duplicates = 0usize;
    for path in &args.input {
        let report = ingest_path(path).map_err(data_err)?;
        let name = path.display().to_string();
        diagnostics.extend(report.parse_diagnostics.into_iter().map(|d| (name.clone(), d)));
        skipped += report.skipped_incomplete;
        duplicates += report.duplicates_removed;
        all.extend(report.records);
    }
    // Records can repeat across input files; dedup once more globally.
    let before = all.len();
    let all = subjkit::ingest::dedup_corpus(all);
    duplicates += before - all.len();

    write_bib_jsonl(create_writer(&args.out)?, &all).map_err(data_err)?;

    if let Some(report_path) = &args.report {
        let mut w = create_writer(report_path)?;
        for (source, detail) in &diagnostics {
            let line = serde_json::json!({ "source": source, "detail": detail });
            writeln!(w, "{line}").map_err(data_err)?;
        }
        w.flush().map_err(data_err)?;
    }
    eprintln!(
        "ingested {} records ({} skipped incomplete, {} duplicates removed, {} diagnostics)",
        all.len(),
        skipped,
        duplicates,
        diagnostics.len()
    );
    Ok(())
}

fn cmd_split(args: SplitArgs) -> CliResult {
    let records = read_records(&args.input)?;
    let split = stratified_split(&records, args.quota, args.seed).map_err(data_err)?;

    let json = serde_json::to_string_pretty(&split).map_err(data_err)?;
    let mut w = create_writer(&args.out)?;
    writeln!(w, "{json}").map_err(data_err)?;
    w.flush().map_err(data_err)?;

    if args.train_out.is_some() || args.test_out.is_some() {
        let (train, test) = subjkit::ingest::apply_split(&records, &split);
        if let Some(path) = &args.train_out {
            let owned: Vec<BibRecord> = train.into_iter().cloned().collect();
            write_bib_jsonl(create_writer(path)?, &owned).map_err(data_err)?;
        }
        if let Some(path) = &args.test_out {
            let owned: Vec<BibRecord> = test.into_iter().cloned().collect();
            write_bib_jsonl(create_writer(path)?, &owned).map_err(data_err)?;
        }
    }
    eprintln!(
        "split {} records into {} train / {} test (quota {}, seed {})",
        records.len(),
        split.train.len(),
        split.test.len(),
        args.quota,
        args.seed
    );
    Ok(())
}

fn cmd_embed(args: EmbedArgs) -> CliResult {
    let embedder = load_embedder(&args.config)?;
    let records = read_records(&args.input)?;
    let texts: Vec<String> = records.iter().map(BibRecord::text).collect();
    let vectors = embedder.embed_batch(&texts).map_err(|e| classify_embed(&e))?;

    let embedded: Vec<EmbeddedRecord> = records
        .iter()
        .zip(vectors)
        .map(|(r, vector)| EmbeddedRecord {
            id: r.id.clone(),
            vector,
        })
        .collect();
    subjkit::embed::write_vectors_jsonl(create_writer(&args.out)?, &embedded).map_err(data_err)?;
    eprintln!("embedded {} records at dim {}", embedded.len(), embedder.dim());
    Ok(())
}

/// Joins vectors to their records by id; every vector must resolve.
fn join_vectors<'a>(
    vectors: &'a [EmbeddedRecord],
    records: &'a [BibRecord],
) -> Result<Vec<(&'a EmbeddedRecord, &'a BibRecord)>, Failure> {
    let by_id: HashMap<&str, &BibRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    vectors
        .iter()
        .map(|v| {
            by_id
                .get(v.id.as_str())
                .map(|r| (v, *r))
                .ok_or_else(|| Failure::Data(format!("vector id {:?} has no record", v.id)))
        })
        .collect()
}

fn cmd_train_count(args: TrainCountArgs) -> CliResult {
    if !args.lambda.is_finite() || args.lambda < 0.0 {
        return Err(Failure::Config(
            "--lambda must be finite and non-negative".to_owned(),
        ));
    }
    let vectors = read_vectors_jsonl(open_reader(&args.vectors)?).map_err(|e| classify_embed(&e))?;
    let records = read_records(&args.records)?;
    let joined = join_vectors(&vectors, &records)?;
    let usable: Vec<&(&EmbeddedRecord, &BibRecord)> = joined
        .iter()
        .filter(|(_, r)| !r.gold_headings.is_empty())
        .collect();
    let y: Vec<f64> = usable
        .iter()
        .map(|(_, r)| r.gold_headings.len() as f64)
        .collect();

    let model = if let Some(k) = args.knn {
        let x: Vec<Vec<f32>> = usable.iter().map(|(v, _)| v.vector.clone()).collect();
        CountModel::Knn(fit_knn_count(&x, &y, k).map_err(data_err)?)
    } else {
        let x: Vec<Vec<f64>> = usable
            .iter()
            .map(|(v, _)| v.vector.iter().map(|&f| f64::from(f)).collect())
            .collect();
        let lambda = if args.tune {
            let (best, scores) = tune_lambda(&x, &y).map_err(data_err)?;
            for (l, err) in &scores {
                eprintln!("lambda {l:>8}: mean abs error {err:.4}");
            }
            eprintln!("selected lambda {best}");
            best
        } else {
            args.lambda
        };
        CountModel::Ridge(fit_ridge(&x, &y, lambda).map_err(data_err)?)
    };

    save_count_model(&args.out, &model).map_err(data_err)?;
    eprintln!(
        "fitted count model on {} records ({} lacked gold headings)",
        usable.len(),
        joined.len() - usable.len()
    );
    Ok(())
}

fn cmd_eval_count(args: EvalCountArgs) -> CliResult {
    if args.cap == 0 {
        return Err(Failure::Config("--cap must be at least 1".to_owned()));
    }
    let model = load_count_model(&args.model).map_err(data_err)?;
    let vectors = read_vectors_jsonl(open_reader(&args.vectors)?).map_err(|e| classify_embed(&e))?;
    let records = read_records(&args.records)?;
    let joined = join_vectors(&vectors, &records)?;
    let scored: Vec<&(&EmbeddedRecord, &BibRecord)> = joined
        .iter()
        .filter(|(_, r)| !r.gold_headings.is_empty())
        .collect();
    if scored.is_empty() {
        return Err(Failure::Data(
            "no records with gold headings to score against".to_owned(),
        ));
    }

    let mut pred = Vec::with_capacity(scored.len());
    let mut gold = Vec::with_capacity(scored.len());
    for (v, r) in &scored {
        pred.push(predict_count(&model, &v.vector, args.cap).map_err(data_err)?);
        gold.push(u32::try_from(r.gold_headings.len()).unwrap_or(u32::MAX));
    }
    let metrics = evaluate_counts(&pred, &gold).map_err(data_err)?;
    let json = serde_json::to_string_pretty(&metrics).map_err(data_err)?;
    println!("{json}");
    Ok(())
}

fn cmd_build_index(args: BuildIndexArgs) -> CliResult {
    if args.k == 0 {
        return Err(Failure::Config("--k must be at least 1".to_owned()));
    }
    let embedder = load_embedder(&args.embed)?;
    let terms = load_vocabulary(&args.vocab).map_err(data_err)?;
    let index = build_index(&terms, &embedder, args.k, Metric::Cosine).map_err(|e| match e {
        subjkit::vocab::VocabError::Embed(inner) => classify_embed(&inner),
        other => data_err(other),
    })?;
    index.save(&args.out).map_err(data_err)?;
    eprintln!(
        "indexed {} terms at k {} (input dim {})",
        index.len(),
        index.k(),
        index.dim_in()
    );
    Ok(())
}

enum GenMethod {
    Zero,
    Few,
    /// `None` means the predicted count, possibly scaled by --multiplier.
    Limit(Option<u32>),
    Cot,
}

fn parse_method(s: &str) -> Result<GenMethod, Failure> {
    match s {
        "zero" | "zero-shot" => Ok(GenMethod::Zero),
        "few" | "few-shot" => Ok(GenMethod::Few),
        "cot" => Ok(GenMethod::Cot),
        "limit" | "limitn" | "limit-n" => Ok(GenMethod::Limit(None)),
        other => {
            let digits = other
                .strip_prefix("limit")
                .map(|t| t.strip_prefix('-').unwrap_or(t));
            match digits {
                Some(d) if !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()) => {
                    let k: u32 = d
                        .parse()
                        .map_err(|_| Failure::Config(format!("bad limit count in {other:?}")))?;
                    if k == 0 {
                        return Err(Failure::Config("limit count must be at least 1".to_owned()));
                    }
                    Ok(GenMethod::Limit(Some(k)))
                }
                _ => Err(Failure::Config(format!(
                    "unknown method {other:?} (expected zero, few, limit, limit<N>, or cot)"
                ))),
            }
        }
    }
}

fn cmd_generate(args: GenerateArgs) -> CliResult {
    let method = parse_method(&args.method)?;
    let plan = match (&method, &args.plan) {
        (GenMethod::Cot, Some(plan)) => Some(plan.clone()),
        (GenMethod::Cot, None) => {
            return Err(Failure::Config("--method cot requires --plan".to_owned()))
        }
        (_, Some(_)) => {
            return Err(Failure::Config(
                "--plan only applies to --method cot".to_owned(),
            ))
        }
        (_, None) => None,
    };
    if args.multiplier == 0 {
        return Err(Failure::Config("--multiplier must be at least 1".to_owned()));
    }

    let needs_counts = match &method {
        GenMethod::Limit(None) => true,
        GenMethod::Cot => plan.as_ref().is_some_and(RoundPlan::needs_n),
        _ => false,
    };

    let records = read_records(&args.records)?;
    let templates = load_templates(&args.variant, args.template.as_deref())?;
    let params = GenerationParams {
        temperature: args.temperature,
        max_new_tokens: args.max_new_tokens,
        seed: args.seed,
    };
    params.validate().map_err(config_err)?;

    let mut client_cfg = ChatClientConfig::from_toml_path(&args.client)
        .map_err(|e| Failure::Config(format!("{}: {e}", args.client.display())))?;
    if client_cfg.backend == subjkit::llm::ChatClientKind::Remote {
        if let Ok(endpoint) = std::env::var("SUBJKIT_ENDPOINT") {
            client_cfg.endpoint = Some(endpoint);
        }
    }
    let api_key = std::env::var("SUBJKIT_API_KEY").ok();
    let client = client_cfg.build(api_key).map_err(config_err)?;

    let counts: Vec<u32> = if needs_counts {
        let model_path = args.count_model.as_ref().ok_or_else(|| {
            Failure::Config("this method needs --count-model".to_owned())
        })?;
        let embed_path = args.embed.as_ref().ok_or_else(|| {
            Failure::Config("--count-model also needs --embed".to_owned())
        })?;
        let model = load_count_model(model_path).map_err(data_err)?;
        let embedder = load_embedder(embed_path)?;
        let texts: Vec<String> = records.iter().map(BibRecord::text).collect();
        let vectors = embedder.embed_batch(&texts).map_err(|e| classify_embed(&e))?;
        vectors
            .iter()
            .map(|v| predict_count(&model, v, args.cap).map_err(data_err))
            .collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };

    let exemplar_records: Vec<BibRecord> = if matches!(method, GenMethod::Few) {
        let path = args.exemplars_from.as_ref().ok_or_else(|| {
            Failure::Config("--method few requires --exemplars-from".to_owned())
        })?;
        let pool = read_records(path)?;
        let chosen: Vec<BibRecord> = pool
            .into_iter()
            .filter(|r| !r.gold_headings.is_empty())
            .take(args.exemplars)
            .collect();
        if chosen.is_empty() {
            return Err(Failure::Data(
                "no exemplar records with gold headings".to_owned(),
            ));
        }
        chosen
    } else {
        Vec::new()
    };
    let exemplars: Vec<&BibRecord> = exemplar_records.iter().collect();

    let mut traces: Vec<GenerationTrace> = Vec::with_capacity(records.len());
    for (i, record) in records.iter().enumerate() {
        let trace = match &method {
            GenMethod::Zero => run_zero_shot(client.as_ref(), &templates, record, &params),
            GenMethod::Few => {
                run_few_shot(client.as_ref(), &templates, record, &exemplars, &params)
            }
            GenMethod::Limit(fixed) => {
                let quota = match fixed {
                    Some(k) => *k,
                    None => args.multiplier * counts[i],
                };
                run_constrained(client.as_ref(), &templates, record, quota, &params)
            }
            GenMethod::Cot => {
                let n = counts.get(i).copied().unwrap_or(0);
                run_cot(
                    client.as_ref(),
                    &templates,
                    record,
                    plan.as_ref().expect("checked"),
                    n,
                    &params,
                )
            }
        }
        .map_err(|e| classify_llm(&e))?;
        traces.push(trace);
    }

    let preds: Vec<PredLine> = traces
        .iter()
        .map(|t| PredLine {
            id: t.record_id.clone(),
            labels: t.aggregated_raw.clone(),
        })
        .collect();
    write_pred_lines(&args.out, &preds)?;

    if let Some(path) = &args.traces {
        let mut w = create_writer(path)?;
        for trace in &traces {
            let json = serde_json::to_string(trace).map_err(data_err)?;
            writeln!(w, "{json}").map_err(data_err)?;
        }
        w.flush().map_err(data_err)?;
    }
    eprintln!("generated predictions for {} records", traces.len());
    Ok(())
}

fn cmd_map(args: MapArgs) -> CliResult {
    let index = VocabIndex::load(&args.index).map_err(data_err)?;
    let embedder = load_embedder(&args.embed)?;
    if embedder.dim() != index.dim_in() {
        return Err(Failure::Config(format!(
            "index expects dim {}, embedder produces {}",
            index.dim_in(),
            embedder.dim()
        )));
    }
    let lines = read_pred_lines(&args.input)?;

    let mut mapped_lines = Vec::with_capacity(lines.len());
    let mut substitutions = 0usize;
    let mut diagnostics = 0usize;
    for line in &lines {
        let outcome = index
            .map_terms_within(&line.labels, &embedder, args.max_distance)
            .map_err(|e| match e {
                subjkit::vocab::VocabError::Embed(inner) => classify_embed(&inner),
                other => data_err(other),
            })?;
        substitutions += outcome.terms.iter().filter(|t| t.was_substituted).count();
        diagnostics += outcome.diagnostics.len();
        mapped_lines.push(PredLine {
            id: line.id.clone(),
            labels: outcome.terms.into_iter().map(|t| t.mapped).collect(),
        });
    }
    write_pred_lines(&args.out, &mapped_lines)?;
    eprintln!(
        "mapped {} prediction lists ({} substitutions, {} passthrough diagnostics)",
        mapped_lines.len(),
        substitutions,
        diagnostics
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> CliResult {
    let records = read_records(&args.records)?;
    let preds = read_pred_lines(&args.preds)?;
    let by_id: HashMap<&str, &Vec<String>> =
        preds.iter().map(|p| (p.id.as_str(), &p.labels)).collect();

    static EMPTY: Vec<String> = Vec::new();
    let mut samples = Vec::new();
    for record in records.iter().filter(|r| !r.gold_headings.is_empty()) {
        let labels = by_id.get(record.id.as_str()).copied().unwrap_or(&EMPTY);
        samples.push(eval_sample(&record.id, &record.gold_headings, labels).map_err(data_err)?);
    }
    let report = eval_corpus(&args.label, samples).map_err(data_err)?;

    let json = serde_json::to_string_pretty(&report).map_err(data_err)?;
    match &args.out {
        Some(path) => {
            let mut w = create_writer(path)?;
            writeln!(w, "{json}").map_err(data_err)?;
            w.flush().map_err(data_err)?;
        }
        None => println!("{json}"),
    }
    eprintln!(
        "{}: recall {:.4} precision {:.4} f1 {:.4} avg_terms {:.2} over {} records",
        report.method_label,
        report.recall,
        report.precision,
        report.f1,
        report.avg_terms,
        report.n_samples
    );
    Ok(())
}

fn read_report(path: &Path) -> Result<CorpusReport, Failure> {
    let reader = open_reader(path)?;
    serde_json::from_reader(reader)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn cmd_compare(args: CompareArgs) -> CliResult {
    let before = read_report(&args.before)?;
    let after = read_report(&args.after)?;
    let cmp = compare_runs(&before, &after).map_err(data_err)?;
    print!("{cmp}");
    if let Some(path) = &args.csv {
        std::fs::write(path, cmp.to_csv()).map_err(data_err)?;
    }
    if let Some(path) = &args.json {
        let json = serde_json::to_string_pretty(&cmp).map_err(data_err)?;
        std::fs::write(path, json + "\n").map_err(data_err)?;
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> CliResult {
    let cfg = ExperimentConfig::from_toml_path(&args.config)
        .map_err(|e| Failure::Config(format!("{}: {e}", args.config.display())))?;
    let artifacts = run_experiment(&cfg).map_err(|e| classify_pipeline(&e))?;

    println!("run directory: {}", artifacts.run_dir.display());
    match &artifacts.comparison {
        Some(cmp) => print!("{cmp}"),
        None => {
            let r = &artifacts.report_raw;
            println!(
                "{}: recall {:.4} precision {:.4} f1 {:.4} avg_terms {:.2} over {} records",
                r.method_label, r.recall, r.precision, r.f1, r.avg_terms, r.n_samples
            );
        }
    }
    Ok(())
}

fn cmd_export_finetune(args: ExportFinetuneArgs) -> CliResult {
    let records = read_records(&args.records)?;
    let templates = load_templates(&args.variant, args.template.as_deref())?;
    let written = match &args.out {
        Some(path) => {
            let mut w = create_writer(path)?;
            let n = export_finetune_dataset(&records, &templates, &mut w)
                .map_err(|e| classify_llm(&e))?;
            w.flush().map_err(data_err)?;
            n
        }
        None => {
            let stdout = std::io::stdout();
            export_finetune_dataset(&records, &templates, stdout.lock())
                .map_err(|e| classify_llm(&e))?
        }
    };
    eprintln!("wrote {written} fine-tuning conversations");
    Ok(())
}
