//! Settings resolution: command-line flag, then `GATEKEEPER_*` environment
//! variable, then the JSON config file, then the built-in default.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use gatekeeper_core::adapter::{DEFAULT_MAX_FILE_BYTES, DEFAULT_SUMMARY_MAX_LINES};
use gatekeeper_core::policy::DEFAULT_LAMBDA;
use gatekeeper_core::MapConfig;
use serde::{Deserialize, Serialize};

/// Flags shared by every command. Clap already applies flag > environment.
#[derive(Debug, Clone, Default, Args)]
pub struct SharedArgs {
    /// Root of the system tree
    #[arg(long, global = true, env = "GATEKEEPER_ROOT")]
    pub root: Option<PathBuf>,
    /// Glob of paths to hide from the map (repeatable, or comma-separated)
    #[arg(long, global = true, env = "GATEKEEPER_IGNORE", value_delimiter = ',')]
    pub ignore: Option<Vec<String>>,
    /// Weight of token cost against relevance in context selection
    #[arg(long, global = true, env = "GATEKEEPER_LAMBDA")]
    pub lambda: Option<f64>,
    /// Ledger file (`step`) or directory of per-run ledgers (`run`)
    #[arg(long, global = true, env = "GATEKEEPER_LEDGER")]
    pub ledger: Option<PathBuf>,
    /// URL of a remote agent for the `remote` strategy
    #[arg(long, global = true, env = "GATEKEEPER_ENDPOINT")]
    pub endpoint: Option<String>,
    /// Override the task's step budget
    #[arg(long, global = true, env = "GATEKEEPER_MAX_STEPS")]
    pub max_steps: Option<u32>,
    /// Lines kept by the extractive summarizer, header included
    #[arg(long, global = true, env = "GATEKEEPER_SUMMARY_LINES")]
    pub summary_lines: Option<usize>,
    /// Largest file the adapter will read, in bytes
    #[arg(long, global = true, env = "GATEKEEPER_MAX_FILE_BYTES")]
    pub max_file_bytes: Option<u64>,
    /// JSON config file with the same keys as the flags (snake_case)
    #[arg(long, global = true, env = "GATEKEEPER_CONFIG")]
    pub config: Option<PathBuf>,
}

/// Contents of the config file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub root: Option<PathBuf>,
    pub ignore: Option<Vec<String>>,
    pub lambda: Option<f64>,
    pub ledger: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub max_steps: Option<u32>,
    pub summary_lines: Option<usize>,
    pub max_file_bytes: Option<u64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_slice(&bytes).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub root: Option<PathBuf>,
    pub ignore: Vec<String>,
    pub lambda: f64,
    pub ledger: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub max_steps: Option<u32>,
    pub summary_lines: usize,
    pub max_file_bytes: u64,
}

impl CliConfig {
    pub fn resolve(args: &SharedArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        Ok(CliConfig {
            root: args.root.clone().or(file.root),
            ignore: args.ignore.clone().or(file.ignore).unwrap_or_default(),
            lambda: args.lambda.or(file.lambda).unwrap_or(DEFAULT_LAMBDA),
            ledger: args.ledger.clone().or(file.ledger),
            endpoint: args.endpoint.clone().or(file.endpoint),
            max_steps: args.max_steps.or(file.max_steps),
            summary_lines: args.summary_lines.or(file.summary_lines).unwrap_or(DEFAULT_SUMMARY_MAX_LINES),
            max_file_bytes: args.max_file_bytes.or(file.max_file_bytes).unwrap_or(DEFAULT_MAX_FILE_BYTES),
        })
    }

    pub fn map_config(&self) -> Result<MapConfig> {
        Ok(MapConfig::new(&self.ignore, self.max_file_bytes, self.summary_lines)?)
    }

    pub fn root(&self) -> Result<&Path> {
        self.root.as_deref().context("no root given (use --root, GATEKEEPER_ROOT or the config file)")
    }
}
