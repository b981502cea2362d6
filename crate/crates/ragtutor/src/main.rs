//! `ragtutor` — course-assistant RAG pipeline in one binary.
//!
//! Subcommands: `ingest` (corpus directory -> index file), `query` (one
//! question against an index), `serve` (Telegram bot), `bench` (generation
//! latency/throughput measurements). Without `BACKEND_ENDPOINT` the mock
//! backends run everything offline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};

use ragtutor::bench::{run_benchmark, TelemetrySampler};
use ragtutor::bot::{self, BotConfig, TELEGRAM_API_BASE};
use ragtutor::config::{load_config, RuntimeConfig};
use ragtutor::embed::{EmbeddingProvider, MockEmbeddingProvider, RemoteEmbeddingProvider};
use ragtutor::index::{ChunkMetadata, VectorIndex};
use ragtutor::ingest::{ingest_corpus, read_corpus_dir};
use ragtutor::llm::{
    GenerationBackend, GenerationParams, HttpGenerationBackend, ReplayBackend, ScriptedMockBackend,
};
use ragtutor::rag::{answer_query, PromptTemplate};

const ENV_HELP: &str = "ENVIRONMENT:
  Configuration comes from the environment and an optional ./.env file
  (KEY=VALUE lines; real environment variables win):
    MODEL_PATH           model file forwarded to the backend
    N_CTX                context window in tokens        [default: 768]
    N_BATCH              batch size in tokens            [default: 256]
    N_GPU_LAYERS         layers offloaded to the GPU     [default: 20]
    FLASH_ATTN           flash attention toggle (1/0)    [default: 1]
    TENSOR_SPLIT         GPU share in [0,1]              [default: 0.85]
    TELEGRAM_BOT_TOKEN   bot token (required for serve)
    EMBEDDING_DIM        embedding dimensionality        [default: 384]
    TOP_K                retrieval fan-out               [default: 4]
    CHUNK_SIZE           chunk size in tokens            [default: 512]
    CHUNK_OVERLAP        chunk overlap in tokens         [default: 64]
    MAX_OUTPUT_TOKENS    generation cap                  [default: 128]
    TEMPERATURE          sampling temperature            [default: 0.2]
    BACKEND_ENDPOINT     inference server base URL; unset selects the
                         offline mock backends
    TELEGRAM_API_BASE    override the Telegram API base (testing)
    GPU_PROBE_CMD        command printing \"<util_pct> <mem_mb>\" per call
    GPU_PROBE_INTERVAL_MS  probe period                  [default: 500]";

const OFFLINE_ANSWER: &str = "This is an offline mock answer produced without an inference \
server. Set BACKEND_ENDPOINT to get real generations.";

const DEFAULT_BENCH_PROMPT: &str = "Explain briefly why offloading transformer layers to the \
GPU speeds up token generation for a locally hosted language model.";

#[derive(Parser)]
#[command(
    name = "ragtutor",
    version,
    about = "Local RAG course assistant: ingest documents, answer questions, serve a Telegram bot, benchmark the backend",
    after_help = ENV_HELP
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Chunk and embed a corpus directory into an index file
    Ingest {
        /// Directory of .txt / .md files
        #[arg(long)]
        corpus: PathBuf,
        /// Index file to write
        #[arg(long, default_value = "kb.idx")]
        out: PathBuf,
    },
    /// Answer one question from an ingested index
    Query {
        /// Index file written by `ingest`
        #[arg(long, default_value = "kb.idx")]
        index: PathBuf,
        /// The question to answer
        #[arg(long)]
        question: String,
    },
    /// Long-poll Telegram and answer incoming questions until Ctrl-C
    Serve {
        /// Index file written by `ingest`
        #[arg(long, default_value = "kb.idx")]
        index: PathBuf,
    },
    /// Measure TTFB and tokens-per-second of the generation backend
    Bench {
        /// Number of sequential iterations
        #[arg(long, default_value_t = 5)]
        iterations: u32,
        /// Prompt to generate from (a fixed default otherwise)
        #[arg(long)]
        prompt: Option<String>,
        /// Exclude iteration 1 (warm-up) from the statistics
        #[arg(long)]
        discard_warmup: bool,
    },
}

/// `dim` comes from the config at ingest time and from the loaded index
/// afterwards, so a changed EMBEDDING_DIM cannot silently disagree with an
/// existing knowledge base.
fn make_provider(config: &RuntimeConfig, dim: usize) -> Arc<dyn EmbeddingProvider> {
    match &config.backend_endpoint {
        Some(endpoint) => Arc::new(RemoteEmbeddingProvider::new(endpoint, dim)),
        None => Arc::new(MockEmbeddingProvider::new(dim)),
    }
}

fn make_chat_backend(config: &RuntimeConfig) -> Arc<dyn GenerationBackend> {
    match &config.backend_endpoint {
        Some(endpoint) => Arc::new(HttpGenerationBackend::new(endpoint)),
        None => {
            log::info!("BACKEND_ENDPOINT unset: answering with the offline mock backend");
            Arc::new(ScriptedMockBackend::canned_answer(OFFLINE_ANSWER))
        }
    }
}

fn make_bench_backend(config: &RuntimeConfig) -> Arc<dyn GenerationBackend> {
    match &config.backend_endpoint {
        Some(endpoint) => Arc::new(HttpGenerationBackend::new(endpoint)),
        None => {
            log::info!(
                "BACKEND_ENDPOINT unset: replaying the bundled RTX 4060 reference measurement"
            );
            Arc::new(ReplayBackend::rtx4060_reference())
        }
    }
}

async fn cmd_ingest(
    config: &RuntimeConfig,
    corpus: &Path,
    out: &Path,
) -> anyhow::Result<()> {
    let docs = read_corpus_dir(corpus).context("reading corpus directory")?;
    anyhow::ensure!(!docs.is_empty(), "no .txt or .md files found under {}", corpus.display());
    let chunks = ingest_corpus(&docs, config)?;
    let origins: BTreeMap<&str, &str> = docs
        .iter()
        .map(|d| (d.doc_id.as_str(), d.origin.as_str()))
        .collect();

    let provider = make_provider(config, config.embedding_dim);
    let mut index = VectorIndex::new(config.embedding_dim);
    for batch in chunks.chunks(64) {
        let texts: Vec<String> = batch.iter().map(|c| c.text.clone()).collect();
        let vectors = provider.embed_texts(&texts).await?;
        for (chunk, vector) in batch.iter().zip(vectors) {
            index.add(
                &chunk.chunk_id,
                vector,
                &chunk.text,
                ChunkMetadata {
                    doc_id: chunk.doc_id.clone(),
                    origin: origins.get(chunk.doc_id.as_str()).unwrap_or(&"").to_string(),
                    seq: chunk.seq,
                    char_span: chunk.char_span,
                },
            )?;
        }
        log::info!("embedded {} / {} chunks", index.len(), chunks.len());
    }
    index.save(out)?;
    println!(
        "indexed {} chunks from {} documents into {}",
        index.len(),
        docs.len(),
        out.display()
    );
    Ok(())
}

async fn cmd_query(config: &RuntimeConfig, index_path: &Path, question: &str) -> anyhow::Result<()> {
    let index = VectorIndex::load(index_path)
        .with_context(|| format!("loading index {}", index_path.display()))?;
    let provider = make_provider(config, index.dim());
    let backend = make_chat_backend(config);
    let outcome = answer_query(
        question,
        &index,
        provider.as_ref(),
        backend.as_ref(),
        &PromptTemplate::default(),
        config,
    )
    .await?;
    println!("{}", bot::format_reply(&outcome));
    Ok(())
}

async fn cmd_serve(config: RuntimeConfig, index_path: &Path) -> anyhow::Result<()> {
    let index = VectorIndex::load(index_path)
        .with_context(|| format!("loading index {}", index_path.display()))?;
    let provider = make_provider(&config, index.dim());
    let backend = make_chat_backend(&config);
    let bot_config = BotConfig {
        api_base: std::env::var("TELEGRAM_API_BASE")
            .unwrap_or_else(|_| TELEGRAM_API_BASE.to_string()),
        ..BotConfig::default()
    };

    let (shutdown_tx, shutdown_rx) = tokio::sync::oneshot::channel();
    tokio::spawn(async move {
        let _ = tokio::signal::ctrl_c().await;
        log::info!("shutdown requested; finishing in-flight work");
        let _ = shutdown_tx.send(());
    });

    log::info!("serving with a {}-entry index", index.len());
    let stats = bot::serve(
        Arc::new(config),
        bot_config,
        Arc::new(index),
        provider,
        backend,
        shutdown_rx,
    )
    .await?;
    log::info!(
        "stopped after {} polls, {} questions, {} greetings",
        stats.polls,
        stats.questions_processed,
        stats.greetings
    );
    Ok(())
}

async fn cmd_bench(
    config: &RuntimeConfig,
    iterations: u32,
    prompt: Option<String>,
    discard_warmup: bool,
) -> anyhow::Result<()> {
    let backend = make_bench_backend(config);
    let params = GenerationParams::from_config(config);
    let prompt = prompt.unwrap_or_else(|| DEFAULT_BENCH_PROMPT.to_string());
    let telemetry = TelemetrySampler::from_env();
    if telemetry.is_none() {
        log::info!("GPU_PROBE_CMD unset: summary will omit GPU telemetry");
    }

    let mut progress = std::io::stderr();
    let run = run_benchmark(
        backend.as_ref(),
        &prompt,
        &params,
        iterations,
        discard_warmup,
        telemetry.as_ref(),
        &mut progress,
    )
    .await?;

    let total_tps_mean = run.iterations.iter().map(|m| m.total_tps()).sum::<f64>()
        / run.iterations.len() as f64;
    eprintln!("# total_tps mean: {total_tps_mean:.2}");
    eprintln!("# p95: linear interpolation at index 0.95*(n-1) of the sorted samples");
    eprintln!("=== SUMMARY ===");
    println!("{}", serde_json::to_string_pretty(&run.summary)?);
    Ok(())
}

#[tokio::main]
async fn main() {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();

    let env: BTreeMap<String, String> = std::env::vars().collect();
    let dotenv_text = std::fs::read_to_string(".env").ok();
    let config = match load_config(&env, dotenv_text.as_deref()) {
        Ok(config) => config,
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(1);
        }
    };

    let result = match cli.command {
        Command::Ingest { corpus, out } => cmd_ingest(&config, &corpus, &out).await,
        Command::Query { index, question } => cmd_query(&config, &index, &question).await,
        Command::Serve { index } => cmd_serve(config, &index).await,
        Command::Bench {
            iterations,
            prompt,
            discard_warmup,
        } => cmd_bench(&config, iterations, prompt, discard_warmup).await,
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
