mod chat;
mod commands;
mod config;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use care::llm_client::MockMode;
use care::pipeline::Method;
use care::prompting::{Adaptation, Engagement, InputMode};
use clap::{Args, Parser, Subcommand};

use crate::config::{Overrides, Paths, RecOverrides, StrategySettings};

#[derive(Parser, Debug)]
#[command(name = "care", version, about = "Conversational recommendation: sequential recommender plus LLM re-ranking")]
struct Cli {
    /// TOML config file
    #[arg(long, global = true, env = "CARE_CONFIG")]
    config: Option<PathBuf>,
    /// Seed for splitting, initialization and training
    #[arg(long, global = true, env = "CARE_SEED")]
    seed: Option<u64>,
    /// Use the mock LLM provider instead of HTTP
    #[arg(long, global = true, value_name = "MODE")]
    mock: Option<MockMode>,
    /// Reply for `--mock fixed`; repeat for `--mock scripted`
    #[arg(long = "mock-reply", global = true, value_name = "TEXT")]
    mock_reply: Vec<String>,
    /// Directory of cached LLM replies
    #[arg(long, global = true, env = "CARE_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    #[arg(long)]
    dialogues: Option<PathBuf>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    kg: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct StrategyArgs {
    #[arg(long)]
    adaptation: Option<Adaptation>,
    /// Contextual engagement strategy
    #[arg(long = "strategy")]
    engagement: Option<Engagement>,
    /// Candidates shown to the model
    #[arg(long)]
    k: Option<usize>,
    /// Titles requested back
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    input_mode: Option<InputMode>,
    #[arg(long)]
    method: Option<Method>,
    /// Normalized edit-distance threshold for title matching
    #[arg(long)]
    theta: Option<f64>,
    /// TOML file overriding prompt texts
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate the corpus, print statistics and optionally write split files
    Ingest {
        #[command(flatten)]
        data: DataArgs,
        /// Directory for train/valid/test JSONL files
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the recommender and write a checkpoint
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print the recommender's top-k for some text
    Recommend {
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// User utterance; repeat for several turns
        #[arg(long, required = true)]
        text: Vec<String>,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Run the full pipeline on the test split and write a report
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        strategy: StrategyArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate every cell of a strategy grid
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        strategy: StrategyArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// TOML grid: adaptations, engagements, optional ks, n, input_mode
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Interactive terminal session
    Chat {
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        strategy: StrategyArgs,
    },
    /// Print entity mentions found in text (standard input if no --text)
    Link {
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        text: Option<String>,
    },
    /// Ground a reply read from standard input against the catalog
    Ground {
        #[arg(long)]
        catalog: Option<PathBuf>,
        /// Comma-separated candidate item ids (required for constrained strategies)
        #[arg(long, value_delimiter = ',')]
        candidates: Option<Vec<usize>>,
        #[command(flatten)]
        strategy: StrategyArgs,
    },
    /// Gradient, metric, edit-distance and prompt-golden checks
    Selftest {
        #[arg(long)]
        golden_dir: Option<PathBuf>,
    },
}

/// Exit 1: a check or evaluation failed. Exit 2: usage or configuration error.
pub enum Failure {
    Check(anyhow::Error),
    Usage(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

pub type CmdResult = Result<(), Failure>;

impl StrategyArgs {
    fn settings(&self) -> StrategySettings {
        StrategySettings {
            adaptation: self.adaptation,
            engagement: self.engagement,
            k: self.k,
            n: self.n,
            input_mode: self.input_mode,
            method: self.method,
        }
    }
}

fn overrides(cli: &Cli) -> Overrides {
    let mut o = Overrides {
        seed: cli.seed,
        mock: cli.mock,
        mock_replies: cli.mock_reply.clone(),
        paths: Paths { cache_dir: cli.cache_dir.clone(), ..Paths::default() },
        ..Overrides::default()
    };
    let data = |o: &mut Overrides, d: &DataArgs| {
        o.paths.dialogues.clone_from(&d.dialogues);
        o.paths.catalog.clone_from(&d.catalog);
        o.paths.kg.clone_from(&d.kg);
    };
    let strat = |o: &mut Overrides, s: &StrategyArgs| {
        o.strategy = s.settings();
        o.theta = s.theta;
        o.paths.templates.clone_from(&s.templates);
    };
    match &cli.command {
        Command::Ingest { data: d, .. } => data(&mut o, d),
        Command::Train { data: d, train: t, checkpoint } => {
            data(&mut o, d);
            o.paths.checkpoint.clone_from(checkpoint);
            o.rec = RecOverrides {
                epochs: t.epochs,
                learning_rate: t.lr,
                embed_dim: t.dim,
                layers: t.layers,
                heads: t.heads,
                batch_size: t.batch_size,
                dropout: t.dropout,
                max_sequence_length: t.max_len,
            };
        }
        Command::Recommend { catalog, checkpoint, .. } => {
            o.paths.catalog.clone_from(catalog);
            o.paths.checkpoint.clone_from(checkpoint);
        }
        Command::Evaluate { data: d, strategy: s, checkpoint, report } => {
            data(&mut o, d);
            strat(&mut o, s);
            o.paths.checkpoint.clone_from(checkpoint);
            o.paths.report.clone_from(report);
        }
        Command::Sweep { data: d, strategy: s, checkpoint, .. } => {
            data(&mut o, d);
            strat(&mut o, s);
            o.paths.checkpoint.clone_from(checkpoint);
        }
        Command::Chat { catalog, checkpoint, strategy: s } => {
            strat(&mut o, s);
            o.paths.catalog.clone_from(catalog);
            o.paths.checkpoint.clone_from(checkpoint);
        }
        Command::Link { catalog, .. } => o.paths.catalog.clone_from(catalog),
        Command::Ground { catalog, strategy: s, .. } => {
            strat(&mut o, s);
            o.paths.catalog.clone_from(catalog);
        }
        Command::Selftest { .. } => {}
    }
    o
}

fn run(cli: Cli) -> CmdResult {
    let file = match &cli.config {
        Some(path) => config::FileConfig::load(path)?,
        None => config::FileConfig::default(),
    };
    let cfg = config::RunConfig::resolve(file, overrides(&cli))?;
    match cli.command {
        Command::Ingest { out, .. } => commands::ingest(&cfg, out.as_deref()),
        Command::Train { .. } => commands::train(&cfg),
        Command::Recommend { text, k, .. } => commands::recommend(&cfg, &text, k),
        Command::Evaluate { .. } => commands::evaluate(&cfg),
        Command::Sweep { grid, out_dir, .. } => commands::sweep(&cfg, &grid, &out_dir),
        Command::Chat { .. } => chat::run(&cfg),
        Command::Link { text, .. } => commands::link(&cfg, text),
        Command::Ground { candidates, .. } => commands::ground(&cfg, candidates),
        Command::Selftest { golden_dir } => selftest::run(&cfg, golden_dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
