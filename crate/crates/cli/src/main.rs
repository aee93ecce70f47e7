use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

mod commands;
mod config;

use commands::{CliError, Ctx};
use config::RunConfig;

/// Knowledge-enhanced multimodal irony detection.
#[derive(Parser)]
#[command(name = "semirnet", version)]
struct Cli {
    /// JSON run configuration; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `train.seed` (and the data seed of `synth`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress output on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expand every vocabulary word into concepts and write the concept cache.
    KnowledgeBuild {
        #[arg(long)]
        numberbatch: Option<PathBuf>,
        #[arg(long)]
        edges: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Output concept cache (`knowledge.cache`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run staged training; writes the model file and epoch log, prints validation metrics.
    Train,
    /// Evaluate a model file on a dataset and print metrics.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Concept cache; defaults to `knowledge.cache`.
        #[arg(long)]
        knowledge: Option<PathBuf>,
    },
    /// Train the full model and the three ablations from shared pre-trained weights.
    Ablate,
    /// Re-render the table of a saved ablation results file.
    Report {
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Generate the synthetic agreement task with its concept resources and a config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.model.seed = seed;
    }
    let mut ctx = Ctx { cfg, quiet: cli.quiet };
    match cli.command {
        Command::KnowledgeBuild {
            numberbatch,
            edges,
            vocab,
            out,
        } => {
            let p = &mut ctx.cfg.paths;
            p.numberbatch = numberbatch.or(p.numberbatch.take());
            p.edges = edges.or(p.edges.take());
            p.vocab = vocab.or(p.vocab.take());
            p.knowledge = out.or(p.knowledge.take());
            commands::knowledge_build(&ctx)
        }
        Command::Train => commands::train(&ctx),
        Command::Eval { model, data, knowledge } => commands::eval(&ctx, model, data, knowledge),
        Command::Ablate => commands::ablate(&ctx),
        Command::Report { results } => commands::report(&ctx, results),
        Command::Synth { out, samples } => commands::synth(&ctx, &out, samples, cli.seed),
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().after_help(config::key_help()).get_matches();
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}
