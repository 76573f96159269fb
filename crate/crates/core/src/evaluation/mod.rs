//! Cross-validated measurement of how much the mined lemmas help the prover.

mod folds;
mod hammer;
mod inject;
mod report;

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

pub use folds::{make_folds, FoldPlan};
pub use hammer::{run_hammer, EvalResult, HammerRun};
pub use inject::{inject_lemmas, InjectOptions, InjectedFile, HAMMER_HEADER, HAMMER_STUB};
pub use report::{
    aggregate, improvement_bp, render_percent, render_report, EvalReport, ReportFormat,
    ReportRow,
};

use crate::agent::CheckerCommand;
use crate::corpus::{count_tactics, CorpusIndex, TheoremRecord};
use crate::store::{flag_redundant, query_training, LemmaStore, StoreError, VerifiedLemma};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{theorems} theorems cannot fill {k} folds")]
    TooFewTheorems { theorems: usize, k: usize },
    #[error("fold count must be at least 2, got {k}")]
    InvalidFoldCount { k: usize },
    #[error("theorem {0} is in the fold plan but in no index")]
    UnknownTheorem(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Baseline,
    Enhanced,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub theorem_id: String,
    pub condition: Condition,
    pub result: EvalResult,
    pub wall_ms: u64,
    pub tactic_count: usize,
    /// Set when the run could not be carried out (sandbox or checker
    /// trouble); such outcomes count as failed and are retried on resume.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvalOutcome {
    pub fn project(&self) -> &str {
        self.theorem_id.split('/').next().unwrap_or_default()
    }
}

pub struct EvalConfig {
    pub command: CheckerCommand,
    pub timeout: Duration,
    pub sandbox_root: PathBuf,
    pub jobs: usize,
    pub inject: InjectOptions,
    pub filter_redundant: bool,
    /// Outcomes already here are not run again; new ones are appended.
    pub outcomes_path: Option<PathBuf>,
    /// When set, every generated prover file is kept here.
    pub files_dir: Option<PathBuf>,
    pub cancel: Option<Arc<AtomicBool>>,
}

impl EvalConfig {
    pub fn new(command: CheckerCommand, sandbox_root: PathBuf) -> Self {
        Self {
            command,
            timeout: Duration::from_secs(60),
            sandbox_root,
            jobs: 1,
            inject: InjectOptions::default(),
            filter_redundant: false,
            outcomes_path: None,
            files_dir: None,
            cancel: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalRun {
    pub report: EvalReport,
    /// Every outcome, previously recorded ones included, in theorem order.
    pub outcomes: Vec<EvalOutcome>,
    /// Theorem id to the `(lemma id, source theorem id)` pairs injected
    /// into its enhanced file.
    pub injections: BTreeMap<String, Vec<(String, String)>>,
    pub sandbox_errors: Vec<String>,
    pub cancelled: bool,
}

pub fn read_outcomes(path: &Path) -> Result<Vec<EvalOutcome>, EvalError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let display = path.display().to_string();
    let io_err = |source| EvalError::Io {
        path: display.clone(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| EvalError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EvalError::Format {
            path: display.clone(),
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect()
}

struct Task<'a> {
    thm: &'a TheoremRecord,
    index: &'a CorpusIndex,
    lemmas: Vec<VerifiedLemma>,
}

/// Runs the baseline and enhanced condition for every theorem of the plan.
/// Lemmas come from the other folds of the same project.
pub fn evaluate(
    indexes: &[CorpusIndex],
    store: &LemmaStore,
    plan: &FoldPlan,
    cfg: &EvalConfig,
) -> Result<EvalRun, EvalError> {
    let mut by_id: BTreeMap<&str, (&TheoremRecord, &CorpusIndex)> = BTreeMap::new();
    for index in indexes {
        for thm in &index.theorems {
            by_id.insert(thm.id.as_str(), (thm, index));
        }
    }
    let mut tasks = Vec::new();
    for fold in 0..plan.k {
        let training = query_training(store, plan, fold)?;
        for id in plan.members(fold) {
            let (thm, index) = *by_id
                .get(id)
                .ok_or_else(|| EvalError::UnknownTheorem(id.to_string()))?;
            let lemmas: Vec<VerifiedLemma> = training
                .iter()
                .filter(|l| l.source_project == index.project)
                .filter(|l| !(cfg.filter_redundant && flag_redundant(l, index)))
                .cloned()
                .collect();
            tasks.push(Task { thm, index, lemmas });
        }
    }

    let previous = match &cfg.outcomes_path {
        Some(p) => read_outcomes(p)?,
        None => Vec::new(),
    };
    let done: HashSet<(String, Condition)> = previous
        .iter()
        .filter(|o| o.error.is_none())
        .map(|o| (o.theorem_id.clone(), o.condition))
        .collect();
    let writer = match &cfg.outcomes_path {
        Some(p) => Some(Mutex::new(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|source| EvalError::Io {
                    path: p.display().to_string(),
                    source,
                })?,
        )),
        None => None,
    };
    fs::create_dir_all(&cfg.sandbox_root).map_err(|source| EvalError::Io {
        path: cfg.sandbox_root.display().to_string(),
        source,
    })?;
    if let Some(dir) = &cfg.files_dir {
        fs::create_dir_all(dir).map_err(|source| EvalError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }

    let cancelled = AtomicBool::new(false);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    let results: Vec<_> = pool.install(|| {
        tasks
            .par_iter()
            .map(|task| {
                if cfg.cancel.as_ref().is_some_and(|c| c.load(Ordering::SeqCst)) {
                    cancelled.store(true, Ordering::SeqCst);
                    return (Vec::new(), Vec::new());
                }
                run_task(task, cfg, &done, writer.as_ref())
            })
            .collect()
    });

    let mut latest: BTreeMap<(String, Condition), EvalOutcome> = BTreeMap::new();
    for o in previous {
        latest.insert((o.theorem_id.clone(), o.condition), o);
    }
    let mut injections = BTreeMap::new();
    for (task, (outcomes, injected)) in tasks.iter().zip(results) {
        for o in outcomes {
            latest.insert((o.theorem_id.clone(), o.condition), o);
        }
        injections.insert(task.thm.id.clone(), injected);
    }
    let outcomes: Vec<EvalOutcome> = latest
        .into_values()
        .filter(|o| plan.fold_of(&o.theorem_id).is_some())
        .collect();
    let sandbox_errors = outcomes
        .iter()
        .filter_map(|o| o.error.as_ref().map(|e| format!("{} ({:?}): {e}", o.theorem_id, o.condition)))
        .collect();
    let projects: Vec<String> = indexes.iter().map(|i| i.project.clone()).collect();
    Ok(EvalRun {
        report: aggregate(&outcomes, &projects),
        outcomes,
        injections,
        sandbox_errors,
        cancelled: cancelled.load(Ordering::SeqCst),
    })
}

fn run_task(
    task: &Task<'_>,
    cfg: &EvalConfig,
    done: &HashSet<(String, Condition)>,
    writer: Option<&Mutex<File>>,
) -> (Vec<EvalOutcome>, Vec<(String, String)>) {
    let thm = task.thm;
    let mut outcomes = Vec::new();
    let enhanced = inject_lemmas(thm, &task.lemmas, task.index, &cfg.inject);
    let injected: Vec<(String, String)> = enhanced
        .injected
        .iter()
        .map(|(id, _)| {
            let source = task
                .lemmas
                .iter()
                .find(|l| &l.id == id)
                .map(|l| l.source_theorem_id.clone())
                .unwrap_or_default();
            (id.clone(), source)
        })
        .collect();
    for condition in [Condition::Baseline, Condition::Enhanced] {
        if done.contains(&(thm.id.clone(), condition)) {
            continue;
        }
        let text = match condition {
            Condition::Baseline => inject_lemmas(thm, &[], task.index, &cfg.inject).text,
            Condition::Enhanced => enhanced.text.clone(),
        };
        if let Some(dir) = &cfg.files_dir {
            let name = format!("{}.{:?}.v", file_stem_for(&thm.id), condition).to_lowercase();
            if let Err(e) = fs::write(dir.join(name), &text) {
                warn!(theorem = %thm.id, "could not keep prover file: {e}");
            }
        }
        let outcome = run_condition(thm, condition, &text, cfg);
        info!(theorem = %thm.id, ?condition, result = ?outcome.result, ms = outcome.wall_ms, "evaluated");
        if let Some(w) = writer {
            let mut line = serde_json::to_string(&outcome).expect("outcome serializes");
            line.push('\n');
            let mut file = w.lock().expect("outcome writer");
            if let Err(e) = file.write_all(line.as_bytes()).and_then(|()| file.flush()) {
                warn!("could not record outcome: {e}");
            }
        }
        outcomes.push(outcome);
    }
    (outcomes, injected)
}

fn run_condition(thm: &TheoremRecord, condition: Condition, text: &str, cfg: &EvalConfig) -> EvalOutcome {
    let failed = |error: String| EvalOutcome {
        theorem_id: thm.id.clone(),
        condition,
        result: EvalResult::Failed,
        wall_ms: 0,
        tactic_count: count_tactics(thm),
        error: Some(error),
    };
    let sandbox = match tempfile::Builder::new()
        .prefix("eval-")
        .tempdir_in(&cfg.sandbox_root)
    {
        Ok(s) => s,
        Err(e) => return failed(format!("sandbox: {e}")),
    };
    match run_hammer(&cfg.command, text, sandbox.path(), cfg.timeout) {
        Ok(run) => EvalOutcome {
            theorem_id: thm.id.clone(),
            condition,
            result: run.result,
            wall_ms: run.wall_ms,
            tactic_count: count_tactics(thm),
            error: None,
        },
        Err(e) => failed(e.to_string()),
    }
}
