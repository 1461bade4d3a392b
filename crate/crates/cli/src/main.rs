//! `spir`: query tables, retrievals, audits, capacity-region math and the
//! networked databases, from one binary.
//!
//! Exit codes: 0 success, 1 audit/decode/verdict failure, 2 usage error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use config::{Common, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "spir", version, about = "Symmetric PIR with user-side common randomness")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the query-cell family as a table.
    Table {
        /// Show the full family only up to this many query sets.
        #[arg(long, default_value_t = 64)]
        limit: usize,
    },
    /// Run one retrieval, in process or against `--endpoints`.
    Retrieve {
        /// User file from `provision`; required with `--endpoints`.
        #[arg(long)]
        user: Option<PathBuf>,
    },
    /// Run the reliability, privacy and independence audits by exhaustive enumeration.
    Audit,
    /// Check a rate triple against the capacity region, or print the boundary.
    Region {
        /// `d,rho_S,rho_U`, each an integer or fraction, e.g. `3/2,3/4,1/4`.
        #[arg(long)]
        triple: Option<String>,
        /// Boundary samples when no triple is given.
        #[arg(long, default_value_t = 8)]
        steps: usize,
    },
    /// Serve one provisioned database.
    Serve {
        /// Database file written by `provision`.
        #[arg(long)]
        db: PathBuf,
        /// Listen address [default: the endpoint recorded in the file].
        #[arg(long)]
        listen: Option<String>,
    },
    /// Deal messages and common randomness into per-database and user files.
    Provision {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) => 2,
        }
    }
}

/// What a command decided, beyond hard errors.
pub enum Outcome {
    Success,
    Failure,
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let cfg = RunConfig::resolve(&cli.common)?;
    match cli.command {
        Command::Table { limit } => commands::table(&cfg, limit),
        Command::Retrieve { user } => commands::retrieve(&cfg, user.as_deref()),
        Command::Audit => commands::audit(&cfg),
        Command::Region { triple, steps } => commands::region(&cfg, triple.as_deref(), steps),
        Command::Serve { db, listen } => commands::serve(&db, listen.as_deref()),
        Command::Provision { out } => commands::provision(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Failure) => ExitCode::from(1),
        Err(e) => {
            eprintln!("spir: {e}");
            ExitCode::from(e.code())
        }
    }
}
