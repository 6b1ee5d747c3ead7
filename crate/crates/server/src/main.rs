use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chronicle::assistant::{Assistant, AssistantConfig, Session};
use chronicle::eval::{evaluate_search, generate_benchmark, BenchmarkShape, EvalConfig, EvalDataset};
use chronicle::fusion::HybridIndex;
use chronicle::kb::{CorpusFormat, CorpusRecord};
use chronicle::lexical::{AnalyzerConfig, Scorer};
use chronicle::llm::{ChatGateway, RecordingGateway};
use chronicle::KnowledgeBase;
use chronicle_server::config::{GatewayMode, Overrides, ServiceConfig};
use chronicle_server::{app_state, build_and_save_index, load_or_build_index, open_kb, BoxError};
use clap::{Args, Parser, Subcommand};

/// Retrieval-augmented assistant for archival diary collections.
#[derive(Parser)]
#[command(name = "chronicle", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true, env = "CHRONICLE_CONFIG")]
    config: Option<PathBuf>,
    /// Directory holding the store and indexes.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    base_url: Option<String>,
    /// Chat-completions URL; switches the gateway to HTTP.
    #[arg(long, global = true)]
    llm_endpoint: Option<String>,
    /// Embedding API URL; switches the provider to HTTP.
    #[arg(long, global = true)]
    embed_endpoint: Option<String>,
    /// Recorded transcript to answer from instead of a live model.
    #[arg(long, global = true)]
    stub_script: Option<PathBuf>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Lexical scorer: tfidf or bm25.
    #[arg(long, global = true)]
    scorer: Option<Scorer>,
}

#[derive(Subcommand)]
enum Command {
    /// Load a corpus file (jsonl or csv) into the store and reindex.
    Ingest {
        file: PathBuf,
        #[arg(long)]
        format: Option<CorpusFormat>,
    },
    /// Rebuild the lexical and vector indexes from the store.
    Index,
    /// Rank entries for a query without calling the language model.
    Search {
        query: String,
        /// hybrid, lexical or semantic.
        #[arg(long, default_value = "hybrid")]
        arm: String,
        #[arg(long)]
        json: bool,
    },
    /// Run one assistant turn and print the cited answer.
    Ask {
        question: String,
        /// Append every model call to this transcript file.
        #[arg(long)]
        record: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Mean Precision@k for the standard configuration grid.
    Eval {
        /// Dataset file; evaluates against the configured store. Without it the
        /// synthetic benchmark is generated and evaluated in memory.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        listen: Option<String>,
    },
    /// Write the synthetic benchmark corpus and dataset.
    GenBenchmark {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, default_value = "benchmark")]
        out: PathBuf,
    },
}

fn overrides(g: &GlobalArgs, listen: Option<String>) -> Overrides {
    Overrides {
        listen,
        base_url: g.base_url.clone(),
        data_dir: g.data_dir.clone(),
        llm_endpoint: g.llm_endpoint.clone(),
        embed_endpoint: g.embed_endpoint.clone(),
        stub_script: g.stub_script.clone(),
        alpha: g.alpha,
        gamma: g.gamma,
        k: g.k,
        scorer: g.scorer,
    }
}

/// Stdout line that ends the process quietly when the reader has gone away,
/// as in `chronicle search ... | head`.
macro_rules! out {
    ($($arg:tt)*) => {
        emit(format_args!($($arg)*), true)
    };
}

fn emit(args: std::fmt::Arguments<'_>, newline: bool) {
    use std::io::Write;
    let mut stdout = std::io::stdout().lock();
    let result = stdout.write_fmt(args).and_then(|_| if newline { stdout.write_all(b"\n") } else { Ok(()) });
    if let Err(e) = result {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: writing output failed: {e}");
        std::process::exit(1);
    }
}

fn main() {
    // RUST_LOG takes a single level name here (error, warn, info, debug, trace)
    let level =
        std::env::var("RUST_LOG").ok().and_then(|v| v.parse::<tracing::Level>().ok()).unwrap_or(tracing::Level::WARN);
    tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<(), BoxError> {
    let listen = match &cli.command {
        Command::Serve { listen } => listen.clone(),
        _ => None,
    };
    let config = ServiceConfig::load(cli.global.config.as_deref(), &overrides(&cli.global, listen))?;
    match cli.command {
        Command::Ingest { file, format } => ingest(&config, &file, format),
        Command::Index => {
            let kb = open_kb(&config)?;
            let index = build_and_save_index(&config, &kb, config.provider().as_ref())?;
            out!("indexed {} entries", index.len());
            Ok(())
        }
        Command::Search { query, arm, json } => search(&config, &query, &arm, json),
        Command::Ask { question, record, json } => ask(&config, &question, record.as_deref(), json),
        Command::Eval { dataset, seed, json } => eval(&config, dataset.as_deref(), seed, json),
        Command::Serve { .. } => serve(&config),
        Command::GenBenchmark { seed, out } => gen_benchmark(seed, &out),
    }
}

fn ingest(config: &ServiceConfig, file: &Path, format: Option<CorpusFormat>) -> Result<(), BoxError> {
    let format = format.unwrap_or(match file.extension().and_then(|e| e.to_str()) {
        Some("csv") => CorpusFormat::Csv,
        _ => CorpusFormat::Jsonl,
    });
    let kb = open_kb(config)?;
    let counts = kb.ingest(BufReader::new(File::open(file)?), format)?;
    let index = build_and_save_index(config, &kb, config.provider().as_ref())?;
    out!("ingested {} entries and {} authors; index holds {} entries", counts.entries, counts.authors, index.len());
    Ok(())
}

fn snippet(text: &str, width: usize) -> String {
    let flat = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if flat.chars().count() <= width {
        flat
    } else {
        flat.chars().take(width.saturating_sub(3)).collect::<String>() + "..."
    }
}

fn search(config: &ServiceConfig, query: &str, arm: &str, json: bool) -> Result<(), BoxError> {
    let kb = open_kb(config)?;
    let provider = config.provider();
    let index = load_or_build_index(config, &kb, provider.as_ref())?;
    let params = &config.fusion;
    let rows: Vec<(i64, f64, String)> = match arm {
        "hybrid" => {
            let ranked = index.hybrid_search(provider.as_ref(), query, params, None)?;
            if json {
                out!("{}", serde_json::to_string_pretty(&ranked)?);
                return Ok(());
            }
            ranked.iter().map(|c| (c.entry_id, c.s_final, format!("sem {:.3} ft {:.3}", c.s_sem, c.s_ft))).collect()
        }
        "lexical" => index
            .lexical_search(query, params.k, params.scorer, None)?
            .into_iter()
            .map(|(i, s)| (i, s, String::new()))
            .collect(),
        "semantic" => index
            .semantic_search(provider.as_ref(), query, params.k, None)?
            .into_iter()
            .map(|(i, s)| (i, s, String::new()))
            .collect(),
        other => return Err(format!("unknown arm {other:?}; use hybrid, lexical or semantic").into()),
    };
    if json {
        let list: Vec<_> = rows.iter().map(|(id, s, _)| serde_json::json!({ "entry_id": id, "score": s })).collect();
        out!("{}", serde_json::to_string_pretty(&list)?);
        return Ok(());
    }
    for (rank, (id, score, detail)) in rows.iter().enumerate() {
        let entry = kb.get_entry(*id)?;
        out!("{:>2}. #{:<6} {:.4}  {}  {}  {}", rank + 1, id, score, entry.date, detail, snippet(&entry.text, 60));
    }
    Ok(())
}

fn ask(config: &ServiceConfig, question: &str, record: Option<&Path>, json: bool) -> Result<(), BoxError> {
    let kb = Arc::new(open_kb(config)?);
    let provider = config.provider();
    let index = load_or_build_index(config, &kb, provider.as_ref())?;
    if config.llm.mode == GatewayMode::Stub && config.llm.stub_script.is_none() {
        eprintln!("note: no chat model configured; set LLM_ENDPOINT or pass --llm-endpoint or --stub-script");
    }
    let mut gateway: Arc<dyn ChatGateway> = config.gateway()?;
    if let Some(path) = record {
        gateway = Arc::new(RecordingGateway::to_file(gateway, path)?);
    }
    let assistant_config = AssistantConfig {
        models: config.llm.models.clone(),
        fusion: config.fusion.clone(),
        history_window: config.history_window,
        url_template: config.url_template(),
        ..AssistantConfig::default()
    };
    let assistant = Assistant::new(kb, index, provider, gateway, assistant_config)?;
    let turn = assistant.run_turn(&Session::new(), question, &config.fusion)?;
    if json {
        out!("{}", serde_json::to_string_pretty(&turn)?);
        return Ok(());
    }
    for w in &turn.warnings {
        eprintln!("warning: {w}");
    }
    out!("{}", turn.answer_rendered);
    if !turn.degraded && !turn.citations.is_empty() {
        out!("");
        for c in &turn.citations {
            out!("[{}] entry {} {}", c.marker, c.entry_id, c.url);
        }
    }
    Ok(())
}

fn eval(config: &ServiceConfig, dataset: Option<&Path>, seed: u64, json: bool) -> Result<(), BoxError> {
    let provider = config.provider();
    let (index, dataset) = match dataset {
        Some(path) => {
            let kb = open_kb(config)?;
            let ds = EvalDataset::read_jsonl(BufReader::new(File::open(path)?))?;
            (load_or_build_index(config, &kb, provider.as_ref())?, ds)
        }
        None => {
            let bench = generate_benchmark(seed, BenchmarkShape::default());
            let kb = KnowledgeBase::open_in_memory()?;
            kb.insert(&bench.authors, &bench.entries)?;
            let index = HybridIndex::build(&kb, provider.as_ref(), AnalyzerConfig::default(), &config.fusion.fields)?;
            (index, bench.dataset)
        }
    };
    let report = evaluate_search(&index, provider.as_ref(), &dataset, &EvalConfig::default_grid(), config.fusion.k)?;
    if json {
        out!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        emit(format_args!("{report}"), false);
    }
    Ok(())
}

fn serve(config: &ServiceConfig) -> Result<(), BoxError> {
    let state = app_state(config)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&config.listen).await?;
        tracing::info!(addr = %config.listen, "listening");
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, chronicle_server::api::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn gen_benchmark(seed: u64, out: &Path) -> Result<(), BoxError> {
    let bench = generate_benchmark(seed, BenchmarkShape::default());
    std::fs::create_dir_all(out)?;
    let mut corpus = BufWriter::new(File::create(out.join("corpus.jsonl"))?);
    for a in &bench.authors {
        serde_json::to_writer(&mut corpus, &CorpusRecord::Author(a.clone()))?;
        corpus.write_all(b"\n")?;
    }
    for e in &bench.entries {
        serde_json::to_writer(&mut corpus, &CorpusRecord::Entry(e.clone()))?;
        corpus.write_all(b"\n")?;
    }
    corpus.flush()?;
    let mut dataset = BufWriter::new(File::create(out.join("dataset.jsonl"))?);
    bench.dataset.write_jsonl(&mut dataset)?;
    dataset.flush()?;
    out!(
        "wrote {} entries, {} authors and {} questions to {}",
        bench.entries.len(),
        bench.authors.len(),
        bench.dataset.questions.len(),
        out.display()
    );
    Ok(())
}
