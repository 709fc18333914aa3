use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use sea_cli::{build_engine, build_index, build_pipeline, SeaConfig};
use sea_core::corpus::Corpus;
use sea_core::dense_index::HashingEmbedder;
use sea_core::orchestrator::{
    evaluate_with, ContextEcho, KnowledgeCopy, PerfectCopy, RetrievalMode,
};
use sea_core::query_gen::{DialogueContext, Speaker};
use sea_core::training_data::{compute_stats, load_dataset};
use sea_server::{AppState, ServerConfig, SessionLog};

#[derive(Parser)]
#[command(
    name = "sea",
    version,
    about = "Search-engine-augmented dialogue toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dense index operations.
    Index {
        #[command(subcommand)]
        action: IndexAction,
    },
    /// Score generated responses on every wizard turn of a dataset.
    Eval(EvalArgs),
    /// Talk to the pipeline as the apprentice, one line per message.
    Chat(ChatArgs),
    /// Run the workbench HTTP API.
    Serve(ServeArgs),
    /// Dataset statistics.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum IndexAction {
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        chunk_size: usize,
        #[arg(long, default_value_t = sea_core::dense_index::DEFAULT_DIMS)]
        dims: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Generator {
    Pipeline,
    PerfectCopy,
    KnowledgeCopy,
    ContextEcho,
}

/// Options shared by commands that build a pipeline; flags override `--config`.
#[derive(clap::Args)]
struct PipelineArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<RetrievalMode>,
    #[arg(long)]
    engine: Option<String>,
    /// Saved dense index (built in memory when omitted).
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    n_docs: Option<usize>,
    #[arg(long)]
    beam_size: Option<usize>,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    block_ngram: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl PipelineArgs {
    fn config(&self, default_mode: RetrievalMode) -> Result<SeaConfig> {
        let mut cfg = match &self.config {
            Some(p) => SeaConfig::load(p)?,
            None => {
                let mut c = SeaConfig::default();
                c.pipeline.retrieval_mode = default_mode;
                c
            }
        };
        let p = &mut cfg.pipeline;
        if let Some(m) = self.mode {
            p.retrieval_mode = m;
        }
        if let Some(e) = &self.engine {
            p.engine_id = e.clone();
        }
        let g = &mut p.generation;
        let overrides = [
            (&mut p.n_docs, self.n_docs),
            (&mut g.beam_size, self.beam_size),
            (&mut g.min_len, self.min_len),
            (&mut g.block_ngram, self.block_ngram),
            (&mut g.max_len, self.max_len),
        ];
        for (field, value) in overrides {
            if let Some(v) = value {
                *field = v;
            }
        }
        if let Some(s) = self.seed {
            g.seed = s;
        }
        Ok(cfg)
    }

    fn corpus(&self) -> Result<Corpus> {
        Corpus::load(&self.corpus)
            .with_context(|| format!("loading corpus {}", self.corpus.display()))
    }
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, value_enum, default_value = "pipeline")]
    generator: Generator,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    json: bool,
}

#[derive(clap::Args)]
struct ChatArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Apprentice persona lines.
    #[arg(long)]
    persona: Vec<String>,
    /// Print each turn trace to stderr.
    #[arg(long)]
    trace: bool,
}

#[derive(clap::Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Append-only session log.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = sea_server::DEFAULT_TURN_LIMIT)]
    turn_limit: usize,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Index {
            action:
                IndexAction::Build {
                    corpus,
                    out,
                    chunk_size,
                    dims,
                },
        } => {
            let corpus = Corpus::load(&corpus)?;
            let idx = build_index(&corpus, &HashingEmbedder::new(dims), chunk_size)?;
            idx.save(&out)?;
            println!(
                "indexed {} chunks from {} documents into {}",
                idx.len(),
                corpus.len(),
                out.display()
            );
        }
        Command::Eval(args) => eval(args)?,
        Command::Chat(args) => chat(args)?,
        Command::Serve(args) => serve(args)?,
        Command::Stats { data, json } => {
            let stats = compute_stats(&load_dataset(&data)?);
            if json {
                println!("{}", serde_json::to_string_pretty(&stats)?);
            } else {
                println!("{stats}");
            }
        }
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let mut cfg = args.pipeline.config(RetrievalMode::None)?;
    if let Some(w) = args.workers {
        cfg.pipeline.workers = w;
    }
    let data = load_dataset(&args.data)?;
    let corpus = args.pipeline.corpus()?;
    let pipeline = build_pipeline(&corpus, &cfg, args.pipeline.index.as_deref())?;
    let (workers, policy) = (cfg.pipeline.workers, cfg.pipeline.empty_knowledge);
    let report = match args.generator {
        Generator::Pipeline => pipeline.evaluate(&data)?,
        Generator::PerfectCopy => evaluate_with(&data, &PerfectCopy, None, workers, policy)?,
        Generator::KnowledgeCopy => evaluate_with(&data, &KnowledgeCopy, None, workers, policy)?,
        Generator::ContextEcho => evaluate_with(&data, &ContextEcho, None, workers, policy)?,
    };
    let mut json = report.to_json(cfg.pipeline.retrieval_mode);
    if !matches!(args.generator, Generator::Pipeline) {
        // reference generators ignore the retrieval mode
        let name = args
            .generator
            .to_possible_value()
            .expect("no skipped variants");
        json["mode"] = serde_json::Value::Null;
        json["generator"] = name.get_name().into();
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&json)?);
    } else {
        match json["generator"].as_str() {
            Some(g) => println!("generator: {g}"),
            None => println!("mode: {}", cfg.pipeline.retrieval_mode),
        }
        println!("{report}");
    }
    Ok(())
}

fn chat(args: ChatArgs) -> Result<()> {
    let cfg = args.pipeline.config(RetrievalMode::Engine)?;
    let corpus = args.pipeline.corpus()?;
    let pipeline = build_pipeline(&corpus, &cfg, args.pipeline.index.as_deref())?;
    let mut ctx = DialogueContext {
        persona: args.persona,
        turns: Vec::new(),
    };
    let stdin = std::io::stdin();
    let mut out = std::io::stdout();
    write!(out, "> ")?;
    out.flush()?;
    for line in stdin.lock().lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            write!(out, "> ")?;
            out.flush()?;
            continue;
        }
        ctx.push(Speaker::Apprentice, line);
        let (response, trace) = pipeline.run_wizard_turn(&ctx)?;
        if args.trace {
            eprintln!("{}", serde_json::to_string(&trace)?);
        }
        writeln!(out, "wizard: {response}")?;
        write!(out, "> ")?;
        out.flush()?;
        ctx.push(Speaker::Wizard, response);
    }
    writeln!(out)?;
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let cfg = args.pipeline.config(RetrievalMode::Engine)?;
    let corpus = args.pipeline.corpus()?;
    let bot = build_pipeline(&corpus, &cfg, args.pipeline.index.as_deref())?;
    let engine = build_engine(&corpus, &cfg)?;
    let log = match &args.log {
        Some(p) => SessionLog::open(p).with_context(|| format!("opening {}", p.display()))?,
        None => SessionLog::disabled(),
    };
    let server_cfg = ServerConfig {
        turn_limit: args.turn_limit,
        ..Default::default()
    };
    let state = Arc::new(AppState::new(server_cfg, engine, Some(Arc::new(bot)), log));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(sea_server::serve(state, args.bind, async {
        let _ = tokio::signal::ctrl_c().await;
    }))?;
    Ok(())
}
