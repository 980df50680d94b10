//! `gatekeeper`: batch commands over the protocol engine.
//!
//! Canonical JSON goes to standard output, diagnostics to standard error.
//!
//! | command  | 0        | 1                   | 2                 | 3          |
//! |----------|----------|---------------------|-------------------|------------|
//! | map      | mapped   |                     | io / usage error  |            |
//! | validate | valid    | invalid             | parse / io error  |            |
//! | step     | accepted | rejected            | parse / io error  | sync drift |
//! | run      | finished |                     | bad input         |            |
//! | replay   | matched  | diverged            | parse / io error  |            |

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use gatekeeper_core::adapter::Manifest;
use gatekeeper_core::harness::{compare_strategies, Strategy, TaskSpec};
use gatekeeper_core::ledger::ReplayError;
use gatekeeper_core::policy::{
    baseline_full_context, baseline_recent_files, GatekeeperPolicy, PlanFile, Policy, PolicyConfig, PolicyError,
    RemotePolicy, ScriptedPlanner, ScriptedPolicy,
};
use gatekeeper_core::scr::canonical_json;
use gatekeeper_core::{
    build_latent_map, canonical_serialize, is_valid, parse, replay, scr_digest, verify_sync, Engine, FsAdapter, Ledger,
    LedgerEntry, Proposal, Scr, SystemAdapter, VirtualAdapter,
};

use crate::config::{CliConfig, SharedArgs};

#[derive(Debug, Parser)]
#[command(name = "gatekeeper", version, about = "State-synchronized agent protocol engine")]
struct Cli {
    #[command(flatten)]
    shared: SharedArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the latent map of the tree under --root
    Map {
        /// Task text recorded in the document
        #[arg(long, default_value = "")]
        task: String,
    },
    /// Check a proposal against the current document
    Validate { current: PathBuf, proposal: PathBuf },
    /// Execute one proposal against --root and print the next document
    Step {
        current: PathBuf,
        proposal: PathBuf,
        /// Also write the next document to this file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run episodes of one or more strategies and print the metrics report
    Run {
        /// TaskSpec file
        #[arg(long)]
        task: PathBuf,
        /// gatekeeper, full-context, recent-files, scripted or remote (repeatable)
        #[arg(long, value_delimiter = ',', required = true)]
        strategy: Vec<String>,
        /// Plan file driving the scripted planner
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Virtual tree manifest to use instead of --root
        #[arg(long, conflicts_with = "root")]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        /// Files provided up front by the recent-files strategy
        #[arg(long, default_value_t = 3)]
        recent: usize,
    },
    /// Re-execute a ledger from an initial document and check every digest
    Replay {
        initial: PathBuf,
        ledger: PathBuf,
        /// Virtual tree manifest to use instead of --root
        #[arg(long, conflicts_with = "root")]
        manifest: Option<PathBuf>,
    },
}

/// Error carrying its exit code.
struct Exit(u8, anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for Exit {
    fn from(e: E) -> Self {
        Exit(2, e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Exit(code, e)) => {
            eprintln!("gatekeeper: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<u8, Exit> {
    let config = CliConfig::resolve(&cli.shared)?;
    match cli.command {
        Command::Map { task } => cmd_map(&config, &task),
        Command::Validate { current, proposal } => cmd_validate(&current, &proposal),
        Command::Step { current, proposal, out } => cmd_step(&config, &current, &proposal, out.as_deref()),
        Command::Run { task, strategy, plan, manifest, repeats, recent } => {
            cmd_run(&config, &task, &strategy, plan.as_deref(), manifest.as_deref(), repeats, recent)
        }
        Command::Replay { initial, ledger, manifest } => cmd_replay(&config, &initial, &ledger, manifest.as_deref()),
    }
}

fn emit(bytes: &[u8]) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(bytes)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn read_scr(path: &Path) -> Result<Scr> {
    parse(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn read_proposal(path: &Path) -> Result<Proposal> {
    Proposal::parse(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

/// In-memory copy of the system, from a manifest or from --root.
fn load_virtual(config: &CliConfig, manifest: Option<&Path>) -> Result<VirtualAdapter> {
    match manifest {
        Some(path) => {
            let m = Manifest::parse(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
            Ok(VirtualAdapter::from_manifest(&m))
        }
        None => Ok(VirtualAdapter::from_dir(config.root()?)?),
    }
}

fn cmd_map(config: &CliConfig, task: &str) -> Result<u8, Exit> {
    let adapter = FsAdapter::open(config.root()?)?;
    let scr = build_latent_map(&adapter, &config.map_config()?, task)?;
    emit(&canonical_serialize(&scr))?;
    Ok(0)
}

fn cmd_validate(current: &Path, proposal: &Path) -> Result<u8, Exit> {
    let current = read_scr(current)?;
    let proposal = read_proposal(proposal)?;
    let report = is_valid(&current, &proposal);
    emit(&canonical_json(&report))?;
    for v in &report.violations {
        eprintln!("{} {:?}: {}", v.code.as_str(), v.id, v.message);
    }
    Ok(if report.valid { 0 } else { 1 })
}

fn cmd_step(config: &CliConfig, current: &Path, proposal: &Path, out: Option<&Path>) -> Result<u8, Exit> {
    let current = read_scr(current)?;
    let proposal = read_proposal(proposal)?;
    let engine = Engine::new(config.map_config()?);
    let mut adapter = FsAdapter::open(config.root()?)?;

    let drift = verify_sync(&current, &adapter, &engine.config)?;
    if !drift.is_empty() {
        emit(&canonical_json(&serde_json::json!({ "sync_drift": drift })))?;
        for m in &drift {
            eprintln!("drift {:?}: {:?}", m.id, m.kind);
        }
        return Err(Exit(3, anyhow!("the document is out of sync with {}", config.root()?.display())));
    }

    let mut ledger = match &config.ledger {
        Some(path) => Some(Ledger::open(path)?),
        None => None,
    };
    let (next, outcome) = engine.step(&current, &proposal, &mut adapter)?;
    if let Some(ledger) = ledger.as_mut() {
        ledger.append(LedgerEntry {
            step_index: ledger.next_index(),
            pre_digest: scr_digest(&current),
            proposal_canonical: String::from_utf8(proposal.canonical_bytes()).expect("canonical bytes are UTF-8"),
            outcome: outcome.clone(),
            post_digest: scr_digest(&next),
        })?;
    }
    let bytes = canonical_serialize(&next);
    if let Some(path) = out {
        std::fs::write(path, &bytes).with_context(|| format!("writing {}", path.display()))?;
    }
    emit(&bytes)?;
    for v in &outcome.report.violations {
        eprintln!("{} {:?}: {}", v.code.as_str(), v.id, v.message);
    }
    Ok(if outcome.accepted { 0 } else { 1 })
}

fn cmd_run(
    config: &CliConfig,
    task: &Path,
    strategies: &[String],
    plan: Option<&Path>,
    manifest: Option<&Path>,
    repeats: usize,
    recent: usize,
) -> Result<u8, Exit> {
    let mut spec = TaskSpec::parse(&read(task)?).with_context(|| format!("parsing {}", task.display()))?;
    if let Some(n) = config.max_steps {
        spec.max_steps = n;
    }
    let plan = match plan {
        Some(p) => Some(PlanFile::parse(&read(p)?).with_context(|| format!("parsing {}", p.display()))?),
        None => None,
    };
    // Episodes run on an in-memory copy so the tree itself is never touched.
    let system = load_virtual(config, manifest)?;
    let policy_config = PolicyConfig::new(config.lambda)?;
    let engine = Engine::new(config.map_config()?);

    let planner = || ScriptedPlanner::new(plan.iter().flat_map(|p| p.steps.clone()));
    let mut built = Vec::new();
    for name in strategies {
        let system = &system;
        let policy_config = policy_config.clone();
        let strategy = match name.as_str() {
            "gatekeeper" => Strategy::new(name.as_str(), move || {
                let p: Box<dyn Policy> = Box::new(GatekeeperPolicy::new(policy_config.clone(), planner()));
                Ok((p, Box::new(system.clone()) as Box<dyn SystemAdapter>))
            }),
            "full-context" => Strategy::new(name.as_str(), move || {
                let p: Box<dyn Policy> = Box::new(baseline_full_context(planner()));
                Ok((p, Box::new(system.clone()) as Box<dyn SystemAdapter>))
            }),
            "recent-files" => Strategy::new(name.as_str(), move || {
                let p: Box<dyn Policy> = Box::new(baseline_recent_files(system, recent, planner())?);
                Ok((p, Box::new(system.clone()) as Box<dyn SystemAdapter>))
            }),
            "scripted" => {
                let Some(plan) = &plan else { return Err(anyhow!("the scripted strategy needs --plan").into()) };
                let steps = plan.steps.clone();
                Strategy::new(name.as_str(), move || {
                    let p: Box<dyn Policy> = Box::new(ScriptedPolicy::new(steps.clone())?);
                    Ok((p, Box::new(system.clone()) as Box<dyn SystemAdapter>))
                })
            }
            "remote" => {
                let Some(endpoint) = config.endpoint.clone() else {
                    return Err(anyhow!("the remote strategy needs --endpoint").into());
                };
                Strategy::new(name.as_str(), move || {
                    let p: Box<dyn Policy> = Box::new(RemotePolicy::new(endpoint.clone()));
                    Ok::<_, PolicyError>((p, Box::new(system.clone()) as Box<dyn SystemAdapter>))
                })
            }
            other => return Err(anyhow!("unknown strategy {other:?}").into()),
        };
        built.push(strategy);
    }

    let mut comparison = compare_strategies(&built, &engine, &spec, repeats)?;
    if let Some(dir) = &config.ledger {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for ((name, ledgers), row) in comparison.ledgers.iter().zip(comparison.report.rows.iter_mut()) {
            for (ledger, run) in ledgers.iter().zip(row.metrics.runs.iter_mut()) {
                let path = dir.join(format!("{name}-{}.jsonl", run.run_index));
                ledger.save_as(&path)?;
                run.ledger_path = Some(path.display().to_string());
            }
        }
    }
    for row in &comparison.report.rows {
        for run in &row.metrics.runs {
            if let Some(reason) = &run.aborted {
                eprintln!("{} run {} aborted: {reason}", row.strategy, run.run_index);
            }
        }
    }
    emit(&canonical_json(&comparison.report))?;
    eprint!("{}", comparison.report.to_table());
    Ok(0)
}

fn cmd_replay(config: &CliConfig, initial: &Path, ledger: &Path, manifest: Option<&Path>) -> Result<u8, Exit> {
    let initial = read_scr(initial)?;
    if !ledger.is_file() {
        return Err(anyhow!("ledger {} does not exist", ledger.display()).into());
    }
    let entries = Ledger::open(ledger)?.entries().to_vec();
    let mut system = load_virtual(config, manifest)?;
    let engine = Engine::new(config.map_config()?);
    match replay(&engine, &initial, &entries, &mut system) {
        Ok(last) => {
            let report = serde_json::json!({ "steps": entries.len(), "final_digest": scr_digest(&last) });
            emit(&canonical_json(&report))?;
            Ok(0)
        }
        Err(ReplayError::Divergence { step, reason }) => {
            emit(&canonical_json(&serde_json::json!({ "divergence": { "step": step, "reason": reason } })))?;
            Err(Exit(1, anyhow!("replay diverged at step {step}: {reason}")))
        }
        Err(e) => Err(e.into()),
    }
}
