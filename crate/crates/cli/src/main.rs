//! `utsplab` command-line tool.

mod commands;
mod config;
mod error;

use clap::{Parser, Subcommand};

use config::{Common, EvalArgs, GenArgs, HeatmapArgs, SearchArgs, TauArgs, TrainArgs};
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "utsplab", version, about = "Heat-map guided TSP experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate instances and a manifest.
    Gen {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: GenArgs,
    },
    /// Train an encoder on a manifest.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: TrainArgs,
    },
    /// Write the sparsified candidate set of one instance.
    Heatmap {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: HeatmapArgs,
    },
    /// Guided search on one instance or a manifest.
    Search {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: SearchArgs,
    },
    /// Gap and overlap summary over a manifest.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: EvalArgs,
    },
    /// Hardness sweep.
    Tau {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: TauArgs,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen { common, args } => commands::gen(&common, &args),
        Command::Train { common, args } => commands::train_cmd(&common, &args),
        Command::Heatmap { common, args } => commands::heatmap(&common, &args),
        Command::Search { common, args } => commands::search(&common, &args),
        Command::Eval { common, args } => commands::eval(&common, &args),
        Command::Tau { common, args } => commands::tau(&common, &args),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => e.exit(),
            _ => {
                let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
                let err = CliError::Usage(first);
                eprintln!("{err}");
                std::process::exit(err.code());
            }
        },
    };
    if let Err(err) = run(cli) {
        eprintln!("{err}");
        std::process::exit(err.code());
    }
}
