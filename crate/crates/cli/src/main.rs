use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pav_cli::commands::{self, BuildDpoArgs, EvolveArgs, NegativesArgs};
use pav_cli::CliError;
use pav_core::datasets::NegativeStrategy;
use pav_core::objectives::DEFAULT_BETA;

/// Reward-guided prompt evolution for text-to-video models and the
/// SFT/DPO datasets built from it.
#[derive(Parser)]
#[command(name = "pav", version)]
struct Cli {
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve every prompt of a file and write one run directory per prompt.
    Evolve {
        /// TOML config; mock backends and defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Source prompts, one per line.
        #[arg(long)]
        prompts: PathBuf,
        /// Output directory (manifest.json, runs/, cache/).
        #[arg(long)]
        out: PathBuf,
        /// Continue a batch in --out: skip finalized runs, replay the rest.
        #[arg(long)]
        resume: bool,
    },
    /// Turn finalized runs into SFT JSONL.
    BuildSft {
        /// A batch directory from `evolve`, or a directory of run directories.
        #[arg(long)]
        runs: PathBuf,
        /// Output JSONL; a `.meta.json` sidecar is written next to it.
        #[arg(long)]
        out: PathBuf,
        /// Keep only runs whose final prompt met every threshold.
        #[arg(long)]
        require_threshold: bool,
    },
    /// Sample, score and pair refinements into DPO JSONL for one round.
    BuildDpo {
        /// TOML config; mock backends and defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Source prompts, one per line.
        #[arg(long)]
        sources: PathBuf,
        /// 1-based DPO round; must be within `dpo.rounds`.
        #[arg(long, default_value_t = 1)]
        round: u32,
        /// Output JSONL; a `.meta.json` sidecar is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-iteration metric means of one run, as CSV.
    Report {
        /// Run directory (`<out>/runs/<run-id>`).
        #[arg(long)]
        run: PathBuf,
    },
    /// Mean DPO loss and margin over a log-prob fixture file.
    DpoLoss {
        /// JSONL with prompt, chosen_lp, rejected_lp, ref_chosen_lp, ref_rejected_lp.
        #[arg(long)]
        fixtures: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BETA)]
        beta: f64,
        /// Also write the summary JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Negative prompts for a file of (refined) prompts.
    MakeNegatives {
        /// TOML config; mock backends and defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Positive prompts, one per line.
        #[arg(long)]
        prompts: PathBuf,
        /// Output JSONL of {positive, negative, strategy}.
        #[arg(long)]
        out: PathBuf,
        /// fixed, icl or tuned_pair; overrides `negatives.strategy`.
        #[arg(long)]
        strategy: Option<NegativeStrategy>,
        /// With tuned_pair: write the curated pairs as training JSONL here.
        #[arg(long)]
        training_out: Option<PathBuf>,
    },
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_max_level(level).with_target(false).init();
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Evolve { config, prompts, out, resume } => {
            commands::evolve(&EvolveArgs { config, prompts, out, resume })?.into_result()
        }
        Command::BuildSft { runs, out, require_threshold } => commands::build_sft(&runs, &out, require_threshold),
        Command::BuildDpo { config, sources, round, out } => {
            commands::build_dpo(&BuildDpoArgs { config, sources, round, out })
        }
        Command::Report { run } => commands::report(&run).map(|_| ()),
        Command::DpoLoss { fixtures, beta, out } => commands::dpo_loss(&fixtures, beta, out.as_deref()),
        Command::MakeNegatives { config, prompts, out, strategy, training_out } => {
            commands::make_negatives(&NegativesArgs { config, prompts, out, strategy, training_out })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.into()
        }
    }
}
