//! Flag and config-file merging. Flags win over the file, the file wins over defaults.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Deserialize;
use spir_core::audit::AuditConfig;
use spir_core::{Fault, PrimeModulus, SchemeParams};

use crate::CliError;

pub const DEFAULT_N: usize = 2;
pub const DEFAULT_K: usize = 2;
pub const DEFAULT_Q: u64 = 2;
pub const DEFAULT_SEED: u64 = 0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Text,
    Json,
    Csv,
}

/// Options shared by every subcommand.
#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// TOML file with default values for any of these options.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Number of databases [default: 2].
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Number of messages [default: 2].
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Prime field size [default: 2].
    #[arg(long, global = true)]
    pub q: Option<u64>,
    /// 1-based index of the message to retrieve [default: 1].
    #[arg(long, global = true)]
    pub desired: Option<usize>,
    /// Master seed for dealing and query selection [default: 0].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Enumeration bound for audits [default: $SPIR_ENUM_BOUND or 10000000].
    #[arg(long, global = true)]
    pub bound: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Comma-separated database addresses, in database order.
    #[arg(long, global = true, value_delimiter = ',')]
    pub endpoints: Option<Vec<String>>,
    /// Deliberate scheme defect: seed-reuse, unmasked-undesired or unmasked-companion.
    #[arg(long, global = true)]
    pub inject: Option<Fault>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub q: Option<u64>,
    pub desired: Option<usize>,
    pub seed: Option<u64>,
    pub bound: Option<u64>,
    pub format: Option<Format>,
    pub endpoints: Option<Vec<String>>,
    pub inject: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

/// Validated settings after merging.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub params: SchemeParams,
    pub desired: usize,
    pub seed: u64,
    pub audit: AuditConfig,
    pub format: Format,
    pub endpoints: Option<Vec<String>>,
    pub inject: Option<Fault>,
}

impl RunConfig {
    pub fn resolve(flags: &Common) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let file_fault = file.inject.as_deref().map(str::parse::<Fault>).transpose().map_err(CliError::Usage)?;
        let n = flags.n.or(file.n).unwrap_or(DEFAULT_N);
        let k = flags.k.or(file.k).unwrap_or(DEFAULT_K);
        let q = flags.q.or(file.q).unwrap_or(DEFAULT_Q);
        let q = PrimeModulus::new(q).map_err(|e| CliError::Usage(e.to_string()))?;
        let params = SchemeParams::new(n, k, q).map_err(|e| CliError::Usage(e.to_string()))?;
        let desired = flags.desired.or(file.desired).unwrap_or(1);
        params.desired(desired).map_err(|e| CliError::Usage(e.to_string()))?;
        let audit = match flags.bound.or(file.bound) {
            Some(b) => AuditConfig::new(b),
            None => AuditConfig::from_env(),
        };
        let inject = flags.inject.or(file_fault);
        Ok(RunConfig {
            params,
            desired,
            seed: flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            audit: audit.with_fault(inject),
            format: flags.format.or(file.format).unwrap_or_default(),
            endpoints: flags.endpoints.clone().or(file.endpoints),
            inject,
        })
    }
}
