//! Episodes and the evaluation metrics.
//!
//! * progress: `100 / (R·K) · Σ_i Σ_j c_ij` over R runs of a task with K subtasks
//! * grounding errors: `1/R · Σ_i E_i`, where `E_i` counts rejected steps whose
//!   violations include `digest-mismatch` or `unknown-component`
//! * tokens: mean over runs of Σ (tokens_in + tokens_out) across all steps

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::adapter::{build_latent_map, SystemAdapter};
use crate::digest::Digest;
use crate::engine::{Engine, StepOutcome};
use crate::ledger::{Ledger, LedgerEntry};
use crate::policy::{Decision, Policy, PolicyError};
use crate::scr::{scr_digest, Scr};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("no results to aggregate")]
    EmptyResults,
    #[error("run {run} has {got} subtask flags, expected {expected}")]
    MismatchedK { run: usize, got: usize, expected: usize },
    #[error("invalid task spec: {0}")]
    InvalidTask(String),
}

/// A check on the final state of the system.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum Predicate {
    FileExists { path: String },
    FileAbsent { path: String },
    FileContains { path: String, literal: String },
    FileEquals { path: String, digest: Digest },
}

impl Predicate {
    pub fn holds(&self, adapter: &dyn SystemAdapter) -> bool {
        match self {
            Predicate::FileExists { path } => adapter.read_bytes(path).is_ok(),
            Predicate::FileAbsent { path } => adapter.read_bytes(path).is_err(),
            Predicate::FileContains { path, literal } => adapter.read(path).is_ok_and(|t| t.contains(literal.as_str())),
            Predicate::FileEquals { path, digest } => {
                adapter.read_bytes(path).is_ok_and(|b| Digest::of_bytes(&b) == *digest)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub description: String,
    pub subtasks: Vec<Predicate>,
    pub max_steps: u32,
}

impl TaskSpec {
    pub fn parse(bytes: &[u8]) -> Result<Self, HarnessError> {
        let spec: TaskSpec = serde_json::from_slice(bytes).map_err(|e| HarnessError::InvalidTask(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.subtasks.is_empty() {
            return Err(HarnessError::InvalidTask("at least one subtask is required".into()));
        }
        Ok(())
    }

    pub fn evaluate(&self, adapter: &dyn SystemAdapter) -> Vec<bool> {
        self.subtasks.iter().map(|p| p.holds(adapter)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_index: usize,
    pub subtask_flags: Vec<bool>,
    pub grounding_errors: u64,
    pub total_tokens: u64,
    pub steps: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ledger_path: Option<String>,
    /// Set when the episode ended on a policy or engine failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

impl RunResult {
    pub fn progress_percent(&self) -> f64 {
        let done = self.subtask_flags.iter().filter(|&&c| c).count();
        100.0 * done as f64 / self.subtask_flags.len().max(1) as f64
    }
}

/// Runs one episode from a freshly built revision-0 map until the policy
/// signals done or `max_steps` proposals have been processed. Every proposal,
/// accepted or rejected, is appended to `ledger`.
pub fn run_episode(
    policy: &mut dyn Policy,
    engine: &Engine,
    adapter: &mut dyn SystemAdapter,
    task: &TaskSpec,
    ledger: &mut Ledger,
    run_index: usize,
) -> RunResult {
    let mut result = RunResult {
        run_index,
        subtask_flags: Vec::new(),
        grounding_errors: 0,
        total_tokens: 0,
        steps: 0,
        ledger_path: ledger.path().map(|p| p.display().to_string()),
        aborted: None,
    };
    let mut current = match build_latent_map(adapter, &engine.config, &task.description) {
        Ok(scr) => scr,
        Err(e) => {
            result.aborted = Some(format!("could not map the system: {e}"));
            result.subtask_flags = task.evaluate(adapter);
            return result;
        }
    };
    let mut last: Option<StepOutcome> = None;

    while result.steps < u64::from(task.max_steps) {
        let decision = match policy.decide(&current, &task.description, last.as_ref()) {
            Ok(d) => d,
            Err(e) => {
                result.aborted = Some(e.to_string());
                break;
            }
        };
        let pre_digest = scr_digest(&current);
        let (next, outcome, proposal_text) = match decision {
            Decision::Done { .. } => break,
            Decision::Unparseable { raw, reason } => {
                let outcome = engine.reject_unparseable(&current, &raw, &reason);
                (current.clone(), outcome, String::from_utf8_lossy(&raw).into_owned())
            }
            Decision::Propose(p) => {
                let text = String::from_utf8(p.canonical_bytes()).expect("canonical bytes are UTF-8");
                match engine.step(&current, &p, adapter) {
                    Ok((next, outcome)) => (next, outcome, text),
                    Err(e) => {
                        result.aborted = Some(e.to_string());
                        break;
                    }
                }
            }
        };
        if !outcome.accepted && outcome.report.has_grounding_error() {
            result.grounding_errors += 1;
        }
        result.total_tokens += outcome.tokens_in + outcome.tokens_out;
        result.steps += 1;
        let entry = LedgerEntry {
            step_index: ledger.next_index(),
            pre_digest,
            proposal_canonical: proposal_text,
            outcome: outcome.clone(),
            post_digest: scr_digest(&next),
        };
        if let Err(e) = ledger.append(entry) {
            result.aborted = Some(e.to_string());
            break;
        }
        current = next;
        last = Some(outcome);
    }
    result.subtask_flags = task.evaluate(adapter);
    result
}

fn check_k(results: &[RunResult], k: usize) -> Result<(), HarnessError> {
    if results.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    for (run, r) in results.iter().enumerate() {
        if r.subtask_flags.len() != k {
            return Err(HarnessError::MismatchedK { run, got: r.subtask_flags.len(), expected: k });
        }
    }
    Ok(())
}

pub fn progress_avg(results: &[RunResult], k: usize) -> Result<f64, HarnessError> {
    check_k(results, k)?;
    let completed: usize = results.iter().map(|r| r.subtask_flags.iter().filter(|&&c| c).count()).sum();
    Ok(100.0 * completed as f64 / (results.len() * k) as f64)
}

pub fn grounding_avg(results: &[RunResult]) -> Result<f64, HarnessError> {
    if results.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    Ok(results.iter().map(|r| r.grounding_errors as f64).sum::<f64>() / results.len() as f64)
}

pub fn tokens_avg(results: &[RunResult]) -> Result<f64, HarnessError> {
    if results.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    Ok(results.iter().map(|r| r.total_tokens as f64).sum::<f64>() / results.len() as f64)
}

/// Population standard deviation.
fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(rename = "R")]
    pub r: usize,
    pub progress_avg_percent: f64,
    pub grounding_avg: f64,
    pub tokens_avg: f64,
    pub runs: Vec<RunResult>,
}

impl Metrics {
    pub fn from_runs(runs: Vec<RunResult>, k: usize) -> Result<Self, HarnessError> {
        Ok(Metrics {
            r: runs.len(),
            progress_avg_percent: progress_avg(&runs, k)?,
            grounding_avg: grounding_avg(&runs)?,
            tokens_avg: tokens_avg(&runs)?,
            runs,
        })
    }
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub strategy: String,
    pub metrics: Metrics,
    pub progress_std: f64,
    pub grounding_std: f64,
    pub tokens_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub task: String,
    pub repeats: usize,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn row(&self, strategy: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }

    /// Aligned plain-text table, one strategy per row, `mean ± std` cells.
    pub fn to_table(&self) -> String {
        let header = ["Strategy", "Avg. Task Completion (%)", "Avg. Grounding Errors", "Avg. Total Tokens"];
        let mut rows: Vec<[String; 4]> = vec![header.map(String::from)];
        for r in &self.rows {
            let m = &r.metrics;
            rows.push([
                r.strategy.clone(),
                format!("{:.1}% ± {:.1}%", m.progress_avg_percent, r.progress_std),
                format!("{:.2} ± {:.2}", m.grounding_avg, r.grounding_std),
                format!("{:.0} ± {:.0}", m.tokens_avg, r.tokens_std),
            ]);
        }
        let widths: Vec<usize> = (0..4).map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for (n, r) in rows.iter().enumerate() {
            let cells: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| {
                    let pad = w - c.chars().count();
                    if i == 0 {
                        format!("{c}{}", " ".repeat(pad))
                    } else {
                        format!("{}{c}", " ".repeat(pad))
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            if n == 0 {
                let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
            }
        }
        out
    }
}

/// Builds a fresh policy and system for one run of a strategy.
pub type EpisodeFactory<'a> = Box<dyn Fn() -> Result<(Box<dyn Policy>, Box<dyn SystemAdapter>), PolicyError> + 'a>;

pub struct Strategy<'a> {
    pub name: String,
    pub make: EpisodeFactory<'a>,
}

impl<'a> Strategy<'a> {
    pub fn new(
        name: impl Into<String>,
        make: impl Fn() -> Result<(Box<dyn Policy>, Box<dyn SystemAdapter>), PolicyError> + 'a,
    ) -> Self {
        Strategy { name: name.into(), make: Box::new(make) }
    }
}

/// Per-strategy results with the ledgers of every run.
pub struct Comparison {
    pub report: Report,
    pub ledgers: Vec<(String, Vec<Ledger>)>,
}

pub fn compare_strategies(
    strategies: &[Strategy<'_>],
    engine: &Engine,
    task: &TaskSpec,
    repeats: usize,
) -> Result<Comparison, HarnessError> {
    if repeats == 0 {
        return Err(HarnessError::InvalidTask("repeats must be at least 1".into()));
    }
    task.validate()?;
    let k = task.subtasks.len();
    let mut rows = Vec::new();
    let mut ledgers = Vec::new();
    for strategy in strategies {
        let mut runs = Vec::new();
        let mut run_ledgers = Vec::new();
        for i in 0..repeats {
            let mut ledger = Ledger::in_memory();
            let run = match (strategy.make)() {
                Ok((mut policy, mut adapter)) => {
                    run_episode(policy.as_mut(), engine, adapter.as_mut(), task, &mut ledger, i)
                }
                Err(e) => RunResult {
                    run_index: i,
                    subtask_flags: vec![false; k],
                    grounding_errors: 0,
                    total_tokens: 0,
                    steps: 0,
                    ledger_path: None,
                    aborted: Some(e.to_string()),
                },
            };
            runs.push(run);
            run_ledgers.push(ledger);
        }
        let progress: Vec<f64> = runs.iter().map(RunResult::progress_percent).collect();
        let grounding: Vec<f64> = runs.iter().map(|r| r.grounding_errors as f64).collect();
        let tokens: Vec<f64> = runs.iter().map(|r| r.total_tokens as f64).collect();
        rows.push(ReportRow {
            strategy: strategy.name.clone(),
            progress_std: std_dev(&progress),
            grounding_std: std_dev(&grounding),
            tokens_std: std_dev(&tokens),
            metrics: Metrics::from_runs(runs, k)?,
        });
        ledgers.push((strategy.name.clone(), run_ledgers));
    }
    Ok(Comparison { report: Report { task: task.description.clone(), repeats, rows }, ledgers })
}

/// Recomputes (grounding errors, total tokens) of a run from its ledger alone.
pub fn audit_ledger(entries: &[LedgerEntry]) -> (u64, u64) {
    let grounding =
        entries.iter().filter(|e| !e.outcome.accepted && e.outcome.report.has_grounding_error()).count() as u64;
    let tokens = entries.iter().map(|e| e.outcome.tokens_in + e.outcome.tokens_out).sum();
    (grounding, tokens)
}

/// The document a run started from, for replay.
pub fn initial_map(
    engine: &Engine,
    adapter: &dyn SystemAdapter,
    task: &TaskSpec,
) -> Result<Scr, crate::adapter::AdapterError> {
    build_latent_map(adapter, &engine.config, &task.description)
}
