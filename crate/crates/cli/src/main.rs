//! `threadloom`: one binary wiring the pipeline stages together.
//!
//! Subcommands are batch stages sharing one TOML config; flags override
//! file values, which override built-in defaults. Exit codes: 0 success,
//! 1 data or runtime error, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use threadloom_core::corpus::{
    load_assignments, load_corpus, load_messages, write_assignments, Corpus,
};
use threadloom_core::disentangle::{
    calibrate_threshold, detect_stream, log_grid, DetectionConfig, ThreadStore,
};
use threadloom_core::evalharness::{evaluate, latency_compare, Labeling};
use threadloom_core::interleave::{build_dataset, InterleaveConfig};
use threadloom_core::lm_core::{LanguageModelScorer, NgramScorer};
use threadloom_core::pipeline::{
    load_state, run_batch, save_state, PipelineConfig, PipelineState, ResponseEvent,
};
use threadloom_core::priority::{thread_weight, PriorityEntry, PriorityQueue, WeightTable};
use threadloom_core::remote_lm::{EndpointConfig, RemoteScorer};
use threadloom_core::NgramModel;

#[derive(Parser)]
#[command(name = "threadloom", version, about = "Online chat disentanglement pipeline")]
struct Cli {
    /// TOML config file; command-line flags take precedence over it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Emit key=value progress lines on stderr.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an add-k smoothed n-gram model on a message corpus.
    TrainLm {
        /// Training corpus (JSONL messages).
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,
        /// N-gram order.
        #[arg(long)]
        order: Option<usize>,
        /// Additive smoothing constant.
        #[arg(long)]
        k: Option<f64>,
        /// Model output path (JSON).
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Build instruction-format training pairs from a labeled corpus.
    Interleave {
        /// Labeled corpus (JSONL, every message carries thread_id).
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Dataset output path (JSONL pairs).
        #[arg(long, value_name = "FILE")]
        output: PathBuf,
        /// RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Smallest thread group size.
        #[arg(long)]
        min_group: Option<usize>,
        /// Largest thread group size.
        #[arg(long)]
        max_group: Option<usize>,
    },
    /// Sweep a threshold grid on a labeled stream and report the best.
    CalibrateThreshold {
        /// Labeled stream (JSONL, sorted by timestamp).
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Grid spec `lo:hi[:steps]:log|lin`.
        #[arg(long)]
        grid: Option<String>,
        #[command(flatten)]
        scorer: ScorerArgs,
    },
    /// Assign each message of a stream to a thread.
    Detect {
        /// Message stream (JSONL, must already be sorted by timestamp).
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Assignment records output path (JSONL).
        #[arg(long, value_name = "FILE")]
        output: PathBuf,
        /// Optional state snapshot so `respond` can run later.
        #[arg(long, value_name = "FILE")]
        state: Option<PathBuf>,
        /// New-thread perplexity threshold.
        #[arg(long)]
        threshold: Option<f64>,
        /// Thread length above which the topic header is compressed.
        #[arg(long)]
        max_len: Option<usize>,
        /// Urgency keyword weights (JSON map).
        #[arg(long, value_name = "FILE")]
        weights: Option<PathBuf>,
        /// Time-decay coefficient per second.
        #[arg(long)]
        alpha: Option<f64>,
        #[command(flatten)]
        scorer: ScorerArgs,
    },
    /// Generate responses for queued threads from a state snapshot.
    Respond {
        /// State snapshot written by `detect`.
        #[arg(long, value_name = "FILE")]
        state: PathBuf,
        /// Responses output path (JSONL); stdout when omitted.
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
        /// Urgency keyword weights (JSON map).
        #[arg(long, value_name = "FILE")]
        weights: Option<PathBuf>,
        /// Time-decay coefficient per second.
        #[arg(long)]
        alpha: Option<f64>,
        /// Prompt message budget.
        #[arg(long)]
        last_n: Option<usize>,
        /// Generation length cap.
        #[arg(long)]
        max_tokens: Option<usize>,
        /// Number of threads to answer; drains the queue when omitted.
        #[arg(long)]
        count: Option<usize>,
        #[command(flatten)]
        scorer: ScorerArgs,
    },
    /// Detect, prioritize and respond over a whole stream in one pass.
    Run {
        /// Message stream (JSONL).
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Output directory for assignments, responses, metrics and the
        /// effective config.
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        /// Urgency keyword weights (JSON map).
        #[arg(long, value_name = "FILE")]
        weights: Option<PathBuf>,
        /// New-thread perplexity threshold.
        #[arg(long)]
        threshold: Option<f64>,
        /// Thread length above which the topic header is compressed.
        #[arg(long)]
        max_len: Option<usize>,
        /// Time-decay coefficient per second.
        #[arg(long)]
        alpha: Option<f64>,
        /// Prompt message budget.
        #[arg(long)]
        last_n: Option<usize>,
        /// Generation length cap.
        #[arg(long)]
        max_tokens: Option<usize>,
        #[command(flatten)]
        scorer: ScorerArgs,
    },
    /// Score predicted assignments against gold labels.
    Eval {
        /// Predicted assignments (JSONL records).
        #[arg(long, value_name = "FILE")]
        pred: PathBuf,
        /// Gold-labeled corpus (JSONL messages).
        #[arg(long, value_name = "FILE")]
        gold: PathBuf,
        /// Metrics report output path (JSON).
        #[arg(long, value_name = "FILE")]
        report: PathBuf,
    },
    /// Compare scoring latency against generation latency.
    Bench {
        /// Sample texts (JSONL messages).
        #[arg(long, value_name = "FILE")]
        samples: PathBuf,
        /// Generation length per sample.
        #[arg(long)]
        max_tokens: Option<usize>,
        #[command(flatten)]
        scorer: ScorerArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
enum ScorerKind {
    Ngram,
    Remote,
}

#[derive(Args)]
struct ScorerArgs {
    /// Scoring backend.
    #[arg(long, value_enum)]
    scorer: Option<ScorerKind>,
    /// N-gram model path (ngram backend).
    #[arg(long, value_name = "FILE")]
    lm: Option<PathBuf>,
    /// Completion API base URL (remote backend).
    #[arg(long)]
    endpoint: Option<String>,
    /// Remote model name.
    #[arg(long)]
    model: Option<String>,
    /// Generation seed (ngram backend).
    #[arg(long)]
    seed: Option<u64>,
}

/// Optional overrides loaded from the TOML config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    detection: FileDetection,
    #[serde(default)]
    topic: FileTopic,
    #[serde(default)]
    priority: FilePriority,
    #[serde(default)]
    pipeline: FilePipeline,
    #[serde(default)]
    scorer: FileScorer,
    #[serde(default)]
    interleave: FileInterleave,
    #[serde(default)]
    lm: FileLm,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDetection {
    threshold: Option<f64>,
    max_len: Option<usize>,
    join_separator: Option<String>,
    speaker_prefix: Option<bool>,
    conditional: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileTopic {
    k_terms: Option<usize>,
    max_iter: Option<usize>,
    tol: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FilePriority {
    weights: Option<PathBuf>,
    alpha: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FilePipeline {
    last_n: Option<usize>,
    max_tokens: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileScorer {
    kind: Option<ScorerKind>,
    lm: Option<PathBuf>,
    endpoint: Option<String>,
    model: Option<String>,
    seed: Option<u64>,
    timeout_ms: Option<u64>,
    max_retries: Option<u32>,
    temperature: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileInterleave {
    seed: Option<u64>,
    min_group: Option<usize>,
    max_group: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileLm {
    order: Option<usize>,
    k: Option<f64>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let data = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&data).with_context(|| format!("parsing config {}", path.display()))
}

struct Logger {
    verbose: bool,
}

impl Logger {
    fn log(&self, fields: &[(&str, String)]) {
        if !self.verbose {
            return;
        }
        let line: Vec<String> = fields.iter().map(|(k, v)| format!("{k}={v}")).collect();
        eprintln!("{}", line.join(" "));
    }
}

fn pick<T: Clone>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn detection_config(
    file: &FileConfig,
    threshold: Option<f64>,
    max_len: Option<usize>,
) -> DetectionConfig {
    let d = DetectionConfig::default();
    let mut topic = d.topic.clone();
    topic.k_terms = file.topic.k_terms.unwrap_or(topic.k_terms);
    topic.max_iter = file.topic.max_iter.unwrap_or(topic.max_iter);
    topic.tol = file.topic.tol.unwrap_or(topic.tol);
    topic.seed = file.topic.seed.unwrap_or(topic.seed);
    DetectionConfig {
        threshold: pick(threshold, file.detection.threshold, d.threshold),
        max_len: pick(max_len, file.detection.max_len, d.max_len),
        join_separator: file
            .detection
            .join_separator
            .clone()
            .unwrap_or(d.join_separator),
        speaker_prefix: file.detection.speaker_prefix.unwrap_or(d.speaker_prefix),
        conditional: file.detection.conditional.unwrap_or(d.conditional),
        topic,
    }
}

fn pipeline_config(
    file: &FileConfig,
    detection: DetectionConfig,
    alpha: Option<f64>,
    last_n: Option<usize>,
    max_tokens: Option<usize>,
) -> PipelineConfig {
    let d = PipelineConfig::default();
    PipelineConfig {
        detection,
        alpha: pick(alpha, file.priority.alpha, d.alpha),
        last_n: pick(last_n, file.pipeline.last_n, d.last_n),
        max_tokens: pick(max_tokens, file.pipeline.max_tokens, d.max_tokens),
    }
}

fn weight_table(file: &FileConfig, flag: Option<&Path>) -> Result<WeightTable> {
    let path = flag.or(file.priority.weights.as_deref());
    match path {
        Some(p) => Ok(WeightTable::load(p)?),
        None => Ok(WeightTable::default()),
    }
}

fn build_scorer(args: &ScorerArgs, file: &FileConfig) -> Result<Box<dyn LanguageModelScorer>> {
    let kind = pick(args.scorer, file.scorer.kind, ScorerKind::Ngram);
    match kind {
        ScorerKind::Ngram => {
            let lm = args
                .lm
                .clone()
                .or_else(|| file.scorer.lm.clone())
                .context("ngram scorer requires --lm MODEL.json")?;
            let model = NgramModel::load(&lm)?;
            let seed = pick(args.seed, file.scorer.seed, 0);
            Ok(Box::new(NgramScorer::new(model, seed)))
        }
        ScorerKind::Remote => {
            let endpoint = args
                .endpoint
                .clone()
                .or_else(|| file.scorer.endpoint.clone())
                .context("remote scorer requires --endpoint URL")?;
            let model = args
                .model
                .clone()
                .or_else(|| file.scorer.model.clone())
                .context("remote scorer requires --model NAME")?;
            let mut cfg = EndpointConfig::new(endpoint, model);
            if let Some(t) = file.scorer.timeout_ms {
                cfg.timeout_ms = t;
            }
            if let Some(r) = file.scorer.max_retries {
                cfg.max_retries = r;
            }
            if let Some(t) = file.scorer.temperature {
                cfg.temperature = t;
            }
            Ok(Box::new(RemoteScorer::new(cfg)?))
        }
    }
}

/// `lo:hi[:steps]:log|lin`, e.g. `2:200:log` or `2:200:40:lin`.
fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let (lo, hi, steps, scale) = match parts.as_slice() {
        [lo, hi, scale] => (lo, hi, 20usize, *scale),
        [lo, hi, steps, scale] => (
            lo,
            hi,
            steps.parse().context("grid steps must be an integer")?,
            *scale,
        ),
        _ => bail!("grid spec must be lo:hi[:steps]:log|lin, got {spec:?}"),
    };
    let lo: f64 = lo.parse().context("grid lo must be a number")?;
    let hi: f64 = hi.parse().context("grid hi must be a number")?;
    if !(lo.is_finite() && hi.is_finite()) || lo <= 0.0 || hi < lo || steps == 0 {
        bail!("grid requires 0 < lo <= hi and steps >= 1, got {spec:?}");
    }
    match scale {
        "log" => Ok(log_grid(lo, hi, steps)),
        "lin" => {
            if steps == 1 {
                return Ok(vec![lo]);
            }
            Ok((0..steps)
                .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
                .collect())
        }
        other => bail!("grid scale must be log or lin, got {other:?}"),
    }
}

/// Deterministic on-disk form of a response: wall-clock time excluded.
#[derive(Serialize)]
struct ResponseRecord<'a> {
    thread_id: &'a str,
    prompt: &'a str,
    response: &'a str,
    popped_key: f64,
}

fn write_responses(events: &[ResponseEvent], out: &mut dyn std::io::Write) -> Result<()> {
    for e in events {
        let rec = ResponseRecord {
            thread_id: &e.thread_id,
            prompt: &e.prompt,
            response: &e.response,
            popped_key: e.popped_key,
        };
        serde_json::to_writer(&mut *out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn gold_labeling(corpus: &Corpus) -> Result<Labeling> {
    corpus
        .iter()
        .map(|m| {
            let label = m
                .thread_id
                .clone()
                .with_context(|| format!("message {} has no gold thread_id", m.id))?;
            Ok((m.id.clone(), label))
        })
        .collect()
}

/// Builds the priority queue for a finished store so a snapshot can be
/// answered later; sets each thread's keyword weight in place.
fn queue_for_store(
    store: ThreadStore,
    weights: &WeightTable,
    alpha: f64,
) -> (ThreadStore, PriorityQueue) {
    let mut threads = store.into_threads();
    let mut queue = PriorityQueue::new();
    for t in &mut threads {
        t.weight = thread_weight(t, weights);
        let request_ts = t
            .request_ts
            .or_else(|| t.messages.last().map(|m| m.ts));
        if let Some(ts) = request_ts {
            queue.upsert(PriorityEntry::new(t.id.clone(), t.weight, ts, alpha));
        }
    }
    (ThreadStore::from_threads(threads), queue)
}

fn effective_config_toml(config: &PipelineConfig, weights_path: Option<&Path>) -> String {
    let topic = &config.detection.topic;
    let mut out = String::new();
    out.push_str("[detection]\n");
    out.push_str(&format!("threshold = {}\n", config.detection.threshold));
    out.push_str(&format!("max_len = {}\n", config.detection.max_len));
    out.push_str(&format!(
        "join_separator = {}\n",
        toml_string(&config.detection.join_separator)
    ));
    out.push_str(&format!("speaker_prefix = {}\n", config.detection.speaker_prefix));
    out.push_str(&format!("conditional = {}\n", config.detection.conditional));
    out.push_str("\n[topic]\n");
    out.push_str(&format!("k_terms = {}\n", topic.k_terms));
    out.push_str(&format!("max_iter = {}\n", topic.max_iter));
    out.push_str(&format!("tol = {}\n", topic.tol));
    out.push_str(&format!("seed = {}\n", topic.seed));
    out.push_str("\n[priority]\n");
    if let Some(p) = weights_path {
        out.push_str(&format!("weights = {}\n", toml_string(&p.display().to_string())));
    }
    out.push_str(&format!("alpha = {}\n", config.alpha));
    out.push_str("\n[pipeline]\n");
    out.push_str(&format!("last_n = {}\n", config.last_n));
    out.push_str(&format!("max_tokens = {}\n", config.max_tokens));
    out
}

fn toml_string(s: &str) -> String {
    format!("{:?}", s)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let logger = Logger {
        verbose: cli.verbose,
    };
    match dispatch(&cli, &logger) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: &Cli, logger: &Logger) -> Result<()> {
    let file = load_file_config(cli.config.as_deref())?;
    match &cli.command {
        Command::TrainLm {
            corpus,
            order,
            k,
            out,
        } => {
            let corpus = load_corpus(corpus)?;
            let texts: Vec<String> = corpus.iter().map(|m| m.text.clone()).collect();
            let order = pick(*order, file.lm.order, 2);
            let k = pick(*k, file.lm.k, 0.5);
            let model = NgramModel::train(&texts, order, k)?;
            model.save(out)?;
            logger.log(&[
                ("stage", "train-lm".into()),
                ("messages", texts.len().to_string()),
                ("order", order.to_string()),
                ("k", k.to_string()),
                ("vocab", model.vocab_size().to_string()),
                ("out", out.display().to_string()),
            ]);
            Ok(())
        }
        Command::Interleave {
            input,
            output,
            seed,
            min_group,
            max_group,
        } => {
            let corpus = load_corpus(input)?;
            let d = InterleaveConfig::default();
            let cfg = InterleaveConfig {
                seed: pick(*seed, file.interleave.seed, d.seed),
                min_group: pick(*min_group, file.interleave.min_group, d.min_group),
                max_group: pick(*max_group, file.interleave.max_group, d.max_group),
            };
            let pairs = build_dataset(&corpus, &cfg)?;
            let mut out = std::fs::File::create(output)
                .with_context(|| format!("creating {}", output.display()))?;
            for p in &pairs {
                serde_json::to_writer(&mut out, p)?;
                std::io::Write::write_all(&mut out, b"\n")?;
            }
            logger.log(&[
                ("stage", "interleave".into()),
                ("pairs", pairs.len().to_string()),
                ("seed", cfg.seed.to_string()),
                ("out", output.display().to_string()),
            ]);
            Ok(())
        }
        Command::CalibrateThreshold {
            input,
            grid,
            scorer,
        } => {
            let messages = load_messages(input)?;
            let grid = parse_grid(grid.as_deref().unwrap_or("2:200:log"))?;
            let scorer = build_scorer(scorer, &file)?;
            let cfg = detection_config(&file, None, None);
            let (threshold, accuracy) =
                calibrate_threshold(&messages, &cfg, scorer.as_ref(), &grid)?;
            logger.log(&[
                ("stage", "calibrate-threshold".into()),
                ("grid_points", grid.len().to_string()),
                ("threshold", threshold.to_string()),
                ("accuracy", accuracy.to_string()),
            ]);
            println!(
                "{}",
                serde_json::json!({ "threshold": threshold, "one_to_one_accuracy": accuracy })
            );
            Ok(())
        }
        Command::Detect {
            input,
            output,
            state,
            threshold,
            max_len,
            weights,
            alpha,
            scorer,
        } => {
            let messages = load_messages(input)?;
            let scorer = build_scorer(scorer, &file)?;
            let cfg = detection_config(&file, *threshold, *max_len);
            let started = std::time::Instant::now();
            let (store, records) = detect_stream(&messages, &cfg, scorer.as_ref())?;
            write_assignments(&records, output)?;
            logger.log(&[
                ("stage", "detect".into()),
                ("messages", records.len().to_string()),
                ("threads", store.threads().len().to_string()),
                ("detect_ms", started.elapsed().as_millis().to_string()),
                ("out", output.display().to_string()),
            ]);
            if let Some(state_path) = state {
                let table = weight_table(&file, weights.as_deref())?;
                let pipeline = pipeline_config(&file, cfg, *alpha, None, None);
                let (store, queue) = queue_for_store(store, &table, pipeline.alpha);
                let state = PipelineState {
                    store,
                    queue,
                    weights: table,
                    config: pipeline,
                };
                save_state(&state, state_path)?;
                logger.log(&[
                    ("stage", "detect".into()),
                    ("state", state_path.display().to_string()),
                ]);
            }
            Ok(())
        }
        Command::Respond {
            state,
            output,
            weights,
            alpha,
            last_n,
            max_tokens,
            count,
            scorer,
        } => {
            let table = weight_table(&file, weights.as_deref())?;
            let detection = detection_config(&file, None, None);
            let config = pipeline_config(&file, detection, *alpha, *last_n, *max_tokens);
            let mut st = load_state(state, config, table)?;
            let generator = build_scorer(scorer, &file)?;
            let budget = count.unwrap_or(usize::MAX);
            let mut events = Vec::new();
            while events.len() < budget && !st.queue.is_empty() {
                events.push(st.respond_next(generator.as_ref())?);
            }
            save_state(&st, state)?;
            match output {
                Some(p) => {
                    let mut f = std::fs::File::create(p)
                        .with_context(|| format!("creating {}", p.display()))?;
                    write_responses(&events, &mut f)?;
                }
                None => write_responses(&events, &mut std::io::stdout().lock())?,
            }
            logger.log(&[
                ("stage", "respond".into()),
                ("responses", events.len().to_string()),
            ]);
            Ok(())
        }
        Command::Run {
            input,
            out_dir,
            weights,
            threshold,
            max_len,
            alpha,
            last_n,
            max_tokens,
            scorer,
        } => {
            let corpus = load_corpus(input)?;
            let table = weight_table(&file, weights.as_deref())?;
            let detection = detection_config(&file, *threshold, *max_len);
            let config = pipeline_config(&file, detection, *alpha, *last_n, *max_tokens);
            let backend = build_scorer(scorer, &file)?;
            std::fs::create_dir_all(out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))?;
            let out = run_batch(
                &corpus,
                &config,
                table,
                backend.as_ref(),
                backend.as_ref(),
            )?;
            write_assignments(&out.assignments, out_dir.join("assignments.jsonl"))?;
            let mut f = std::fs::File::create(out_dir.join("responses.jsonl"))?;
            write_responses(&out.responses, &mut f)?;
            if let Some(metrics) = &out.metrics {
                std::fs::write(
                    out_dir.join("metrics.json"),
                    serde_json::to_string_pretty(metrics)?,
                )?;
            }
            let weights_path = weights
                .as_deref()
                .or(file.priority.weights.as_deref());
            std::fs::write(
                out_dir.join("effective-config.toml"),
                effective_config_toml(&config, weights_path),
            )?;
            logger.log(&[
                ("stage", "run".into()),
                ("messages", out.assignments.len().to_string()),
                ("responses", out.responses.len().to_string()),
                ("detect_ms", out.detect_time.as_millis().to_string()),
                ("respond_ms", out.respond_time.as_millis().to_string()),
                ("out_dir", out_dir.display().to_string()),
            ]);
            Ok(())
        }
        Command::Eval { pred, gold, report } => {
            let records = load_assignments(pred)?;
            let gold_corpus = load_corpus(gold)?;
            let gold = gold_labeling(&gold_corpus)?;
            let predicted: Labeling = records
                .iter()
                .map(|r| (r.message_id.clone(), r.predicted_thread.clone()))
                .collect();
            let metrics = evaluate(&predicted, &gold)?;
            std::fs::write(report, serde_json::to_string_pretty(&metrics)?)?;
            logger.log(&[
                ("stage", "eval".into()),
                ("pairwise_f1", metrics.pairwise_f1.to_string()),
                ("one_to_one_accuracy", metrics.one_to_one_accuracy.to_string()),
                ("report", report.display().to_string()),
            ]);
            Ok(())
        }
        Command::Bench {
            samples,
            max_tokens,
            scorer,
        } => {
            let corpus = load_corpus(samples)?;
            let texts: Vec<String> = corpus.iter().map(|m| m.text.clone()).collect();
            let backend = build_scorer(scorer, &file)?;
            let max_tokens = pick(*max_tokens, file.pipeline.max_tokens, 64);
            let report = latency_compare(backend.as_ref(), &texts, max_tokens)?;
            logger.log(&[
                ("stage", "bench".into()),
                ("samples", report.samples.to_string()),
                ("speed_ratio", format!("{:.3}", report.speed_ratio)),
            ]);
            println!(
                "{}",
                serde_json::json!({
                    "samples": report.samples,
                    "mean_score_time_us": report.mean_score_time.as_micros() as u64,
                    "mean_generate_time_us": report.mean_generate_time.as_micros() as u64,
                    "speed_ratio": report.speed_ratio,
                })
            );
            Ok(())
        }
    }
}
