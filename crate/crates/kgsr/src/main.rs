use std::path::PathBuf;
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{Arg, ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use kgsr::chat::HttpChatClient;
use kgsr::config::{PipelineConfig, KEYS};
use kgsr::pipeline::{self, AugmentMode};
use kgsr::planted::{self, PlantedConfig};
use kgsr::{Error, Result};
use kgsr_core::prompt::ChatClient;

/// Knowledge-graph subgraph recommender with review-driven graph augmentation.
///
/// Every pipeline setting is available both as a flag and as a `key = value`
/// line in the file given to --config; flags win over the file.
#[derive(Debug, Parser)]
#[command(name = "kgsr", version)]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load triples and interactions, split them, and write the base graph.
    Ingest,
    /// Extract knowledge from reviews and add it to the graph.
    Augment(AugmentArgs),
    /// TransE embeddings for every entity and relation.
    Pretrain,
    /// Train the attention, encoder and embeddings on the training split.
    Train,
    /// Rank the catalog for every test user and report the metrics.
    Evaluate(EvaluateArgs),
    /// Write the top-K recommendations with their best reasoning path.
    Recommend(RecommendArgs),
    /// Explain one recommendation along its reasoning paths.
    Explain(ExplainArgs),
    /// Write the synthetic planted-preference dataset to a directory.
    PlantedData(PlantedArgs),
}

#[derive(Debug, Args)]
#[group(multiple = false)]
struct AugmentArgs {
    /// Use the keyword lexicon (the default).
    #[arg(long)]
    offline: bool,
    /// Use the chat-completions client (needs the API key variable).
    #[arg(long)]
    llm: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Comma-separated subgraph sizes N to evaluate, one report row each
    /// [default: top-n].
    #[arg(long, value_delimiter = ',', value_name = "N,..")]
    subgraph_sizes: Vec<usize>,
    /// Add a random-ranking row.
    #[arg(long)]
    baseline: bool,
}

#[derive(Debug, Args)]
struct RecommendArgs {
    /// Only this user [default: every user].
    #[arg(long)]
    user: Option<String>,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[arg(long)]
    user: String,
    #[arg(long)]
    item: String,
    /// Number of reasoning paths to explain.
    #[arg(long, default_value_t = 1)]
    paths: usize,
    /// Phrase the explanation with the chat client instead of the template.
    #[arg(long)]
    llm: bool,
}

#[derive(Debug, Args)]
struct PlantedArgs {
    /// Output directory.
    #[arg(long)]
    dir: PathBuf,
}

fn config_args() -> Vec<Arg> {
    let defaults = PipelineConfig::default();
    KEYS.iter()
        .map(|&(key, help)| {
            let arg = Arg::new(key)
                .long(key.replace('_', "-"))
                .value_name("VALUE")
                .help(help)
                .global(true)
                .help_heading("Pipeline settings");
            match defaults.get(key).filter(|d| !d.is_empty()) {
                Some(d) => arg.default_value(d),
                None => arg,
            }
        })
        .collect()
}

/// Values the user typed on the command line, wherever clap stored them.
fn explicit<'a>(top: &'a ArgMatches, key: &str) -> Option<&'a str> {
    let mut scopes = vec![top];
    if let Some((_, sub)) = top.subcommand() {
        scopes.insert(0, sub);
    }
    scopes.into_iter().find_map(|m| {
        (m.value_source(key) == Some(ValueSource::CommandLine))
            .then(|| m.get_one::<String>(key).map(String::as_str))
            .flatten()
    })
}

fn build_config(cli: &Cli, matches: &ArgMatches) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) if !path.is_file() => {
            return Err(Error::Usage(format!("config file {} does not exist", path.display())))
        }
        Some(path) => PipelineConfig::from_file(path).map_err(|e| match e {
            Error::Parse { .. } => Error::Usage(e.to_string()),
            other => other,
        })?,
        None => PipelineConfig::default(),
    };
    for (key, _) in KEYS {
        if let Some(value) = explicit(matches, key) {
            cfg.set(key, value).map_err(Error::Usage)?;
        }
    }
    Ok(cfg)
}

fn llm_client(cfg: &PipelineConfig) -> Result<HttpChatClient> {
    HttpChatClient::from_env(&cfg.llm)
}

fn run(cli: &Cli, cfg: &PipelineConfig) -> Result<()> {
    match &cli.command {
        Command::Ingest => {
            let s = pipeline::ingest(cfg)?;
            log::info!(
                "ingested {} users, {} items, {} properties, {} triples; {} train / {} test interactions",
                s.entities[0],
                s.entities[1],
                s.entities[2],
                s.triples,
                s.train,
                s.test
            );
        }
        Command::Augment(a) => {
            let mode = if a.llm { AugmentMode::Llm } else { AugmentMode::Offline };
            let s = pipeline::augment(cfg, mode)?;
            log::info!(
                "{} reviews ({} held out), {} extractions, {} new triples, {} duplicates, {} skipped, {} sentiment conflicts, {} reply warnings",
                s.reviews,
                s.held_out_reviews,
                s.extracted,
                s.injection.added,
                s.injection.duplicates,
                s.injection.skipped,
                s.injection.conflicts.len(),
                s.warnings
            );
        }
        Command::Pretrain => {
            let ckpt = pipeline::pretrain(cfg)?;
            log::info!("pretrained {} entity embeddings", ckpt.entity_names.len());
        }
        Command::Train => {
            let outcome = pipeline::train(cfg)?;
            if let Some(last) = outcome.history.last() {
                log::info!("final mean loss {:.6}", last.mean_loss);
            }
        }
        Command::Evaluate(e) => {
            let report = pipeline::evaluate(cfg, &e.subgraph_sizes, e.baseline)?;
            eprint!("{}", report.table());
            println!("{}", report.to_json());
        }
        Command::Recommend(r) => {
            let rows = pipeline::recommend(cfg, r.user.as_deref())?;
            log::info!("wrote {} recommendations", rows.len());
        }
        Command::Explain(x) => {
            let client = if x.llm { Some(llm_client(cfg)?) } else { None };
            let explained = pipeline::explain(
                cfg,
                &x.user,
                &x.item,
                x.paths,
                client.as_ref().map(|c| c as &dyn ChatClient),
            )?;
            for e in explained {
                if e.explanation.degraded {
                    log::warn!("chat client failed; template explanation used");
                }
                println!("{}\t{:.6e}\t{}", e.path, e.weight, e.explanation.text);
            }
        }
        Command::PlantedData(p) => {
            let data = planted::generate(&PlantedConfig {
                seed: cfg.seed,
                ..PlantedConfig::default()
            })?;
            data.write_to(&p.dir)?;
            log::info!("wrote the planted dataset to {}", p.dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let matches = match Cli::command().args(config_args()).try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();

    let result = build_config(&cli, &matches).and_then(|cfg| {
        eprint!("# configuration\n{}", cfg.echo());
        cfg.validate()?;
        run(&cli, &cfg)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
