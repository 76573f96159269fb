use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use super::{build_formalize_prompt, build_nl_proof_prompt, count_nl_steps, parse_lemma_script, NlProof};
use crate::agent::{
    prove_agent, AgentError, CheckContext, Checker, CheckerCommand, CheckerError, CoqChecker,
    LlmFixer,
};
use crate::corpus::{CorpusIndex, TheoremRecord};
use crate::gateway::{Gateway, GatewayError, GenerationParams};
use crate::retrieval::{collect_context_with_depth, RetrievalError, DEFAULT_DEPTH_LIMIT};
use crate::store::{normalized_statement, AddResult, LemmaStore, StoreError, VerifiedLemma};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Checker(#[from] CheckerError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("worker pool: {0}")]
    Pool(String),
}

impl From<AgentError> for ExtractError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Gateway(g) => Self::Gateway(g),
            AgentError::Checker(c) => Self::Checker(c),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExtractConfig {
    pub extraction_params: GenerationParams,
    pub agent_params: GenerationParams,
    pub round_limit: usize,
    pub context_budget: usize,
    pub depth_limit: usize,
    pub checker: CheckerCommand,
    pub check_timeout: Duration,
    pub sandbox_root: PathBuf,
}

impl ExtractConfig {
    pub fn new(extraction_model: &str, agent_model: &str, checker: CheckerCommand, sandbox_root: PathBuf) -> Self {
        Self {
            extraction_params: GenerationParams::new(extraction_model),
            agent_params: GenerationParams::new(agent_model),
            round_limit: crate::agent::DEFAULT_ROUND_LIMIT,
            context_budget: 32_000,
            depth_limit: DEFAULT_DEPTH_LIMIT,
            checker,
            check_timeout: Duration::from_secs(60),
            sandbox_root,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TheoremTelemetry {
    pub id: String,
    pub nl_steps: usize,
    pub candidates: usize,
    pub verified: usize,
    pub rounds_total: usize,
    pub refusal: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TheoremExtraction {
    pub lemmas: Vec<VerifiedLemma>,
    pub telemetry: TheoremTelemetry,
}

/// Runs both stages and the agent for one theorem with the checker built
/// from `cfg`.
pub fn extract_for_theorem(
    thm: &TheoremRecord,
    index: &CorpusIndex,
    gateway: &Gateway,
    cfg: &ExtractConfig,
) -> Result<TheoremExtraction, ExtractError> {
    let checker = CoqChecker {
        command: cfg.checker.clone(),
        context: CheckContext::for_theorem(thm, index, cfg.depth_limit),
        sandbox_root: cfg.sandbox_root.clone(),
        timeout: cfg.check_timeout,
    };
    extract_for_theorem_with(thm, index, gateway, cfg, &checker)
}

pub fn extract_for_theorem_with(
    thm: &TheoremRecord,
    index: &CorpusIndex,
    gateway: &Gateway,
    cfg: &ExtractConfig,
    checker: &dyn Checker,
) -> Result<TheoremExtraction, ExtractError> {
    let bundle = collect_context_with_depth(thm, index, cfg.context_budget, cfg.depth_limit)?;
    let stage1 = build_nl_proof_prompt(&bundle, &thm.statement_text);
    let reply = gateway.chat(&stage1, &cfg.extraction_params)?;
    let nl = NlProof::new(reply.content.clone(), thm.id.clone());
    let mut telemetry = TheoremTelemetry {
        id: thm.id.clone(),
        nl_steps: count_nl_steps(&nl),
        refusal: nl.is_refusal(),
        ..Default::default()
    };
    if telemetry.refusal {
        info!(theorem = %thm.id, "stage 1 declined to give a proof");
        return Ok(TheoremExtraction {
            lemmas: Vec::new(),
            telemetry,
        });
    }

    let mut history = stage1;
    history.push(reply);
    let stage2 = build_formalize_prompt(&history);
    let script = gateway.chat(&stage2, &cfg.extraction_params)?;
    let own = normalized_statement(&thm.statement_text);
    let candidates: Vec<_> = parse_lemma_script(&script.content, &thm.id)
        .candidates
        .into_iter()
        .filter(|c| {
            let restated = normalized_statement(&c.statement) == own;
            if restated {
                info!(theorem = %thm.id, lemma = %c.name, "restates the theorem, dropped");
            }
            !restated
        })
        .collect();
    telemetry.candidates = candidates.len();

    let fixer = LlmFixer {
        gateway,
        params: cfg.agent_params.clone(),
    };
    let mut lemmas = Vec::new();
    for candidate in &candidates {
        let run = prove_agent(candidate, cfg.round_limit, checker, &fixer)?;
        telemetry.rounds_total += run.checks;
        if let (Some(rounds), Some(verified)) = (run.rounds_used(), run.verified) {
            lemmas.push(VerifiedLemma::from_candidate(
                verified,
                &index.project,
                &cfg.extraction_params.model_id,
                rounds,
            ));
        }
    }
    telemetry.verified = lemmas.len();
    Ok(TheoremExtraction { lemmas, telemetry })
}

pub fn read_telemetry(path: &Path) -> Result<Vec<TheoremTelemetry>, ExtractError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let io_err = |source| ExtractError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(t) => out.push(t),
            Err(e) => warn!("{}: unreadable telemetry line skipped: {e}", path.display()),
        }
    }
    Ok(out)
}

#[derive(Debug, Default)]
pub struct BatchSummary {
    pub processed: usize,
    pub resumed: usize,
    pub lemmas_added: usize,
    pub duplicates: usize,
    pub failed: Vec<(String, String)>,
    pub cancelled: bool,
}

pub struct BatchOptions<'a> {
    pub jobs: usize,
    pub telemetry_path: Option<&'a Path>,
    pub cancel: Option<Arc<AtomicBool>>,
}

struct Committer<'a> {
    next: usize,
    pending: BTreeMap<usize, Option<Result<TheoremExtraction, ExtractError>>>,
    telemetry: Option<File>,
    summary: BatchSummary,
    store: &'a LemmaStore,
    ids: Vec<String>,
    fatal: Option<ExtractError>,
}

impl Committer<'_> {
    /// Commits every contiguous finished slot, in input order.
    fn drain(&mut self) {
        while let Some(slot) = self.pending.remove(&self.next) {
            let id = self.ids[self.next].clone();
            self.next += 1;
            match slot {
                None => {}
                Some(Ok(extraction)) => {
                    if let Err(e) = self.commit(extraction) {
                        self.summary.failed.push((id, e.to_string()));
                        self.fatal.get_or_insert(e);
                    } else {
                        self.summary.processed += 1;
                    }
                }
                Some(Err(e)) => {
                    warn!(theorem = %id, "extraction failed: {e}");
                    self.summary.failed.push((id, e.to_string()));
                }
            }
        }
    }

    fn commit(&mut self, extraction: TheoremExtraction) -> Result<(), ExtractError> {
        for lemma in extraction.lemmas {
            match self.store.add(lemma)? {
                AddResult::Added => self.summary.lemmas_added += 1,
                AddResult::Duplicate => self.summary.duplicates += 1,
            }
        }
        if let Some(file) = &mut self.telemetry {
            let mut line = serde_json::to_string(&extraction.telemetry).expect("telemetry serializes");
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|()| file.flush())
                .map_err(|source| ExtractError::Io {
                    path: "telemetry".into(),
                    source,
                })?;
        }
        Ok(())
    }
}

/// Extracts from every theorem not yet recorded in the telemetry file.
/// Theorems run in parallel; their lemmas and telemetry are committed in
/// input order, so outputs do not depend on scheduling. A theorem that fails
/// is logged and left for a later run.
pub fn extract_batch(
    theorems: &[&TheoremRecord],
    index: &CorpusIndex,
    gateway: &Gateway,
    store: &LemmaStore,
    cfg: &ExtractConfig,
    options: &BatchOptions<'_>,
) -> Result<BatchSummary, ExtractError> {
    let done: HashSet<String> = match options.telemetry_path {
        Some(p) => read_telemetry(p)?.into_iter().map(|t| t.id).collect(),
        None => HashSet::new(),
    };
    let todo: Vec<&TheoremRecord> = theorems
        .iter()
        .copied()
        .filter(|t| !done.contains(&t.id))
        .collect();
    let telemetry = match options.telemetry_path {
        Some(p) => Some(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|source| ExtractError::Io {
                    path: p.display().to_string(),
                    source,
                })?,
        ),
        None => None,
    };
    std::fs::create_dir_all(&cfg.sandbox_root).map_err(|source| ExtractError::Io {
        path: cfg.sandbox_root.display().to_string(),
        source,
    })?;
    let committer = Mutex::new(Committer {
        next: 0,
        pending: BTreeMap::new(),
        telemetry,
        summary: BatchSummary {
            resumed: theorems.len() - todo.len(),
            ..Default::default()
        },
        store,
        ids: todo.iter().map(|t| t.id.clone()).collect(),
        fatal: None,
    });
    let stop = AtomicBool::new(false);
    let cancelled = AtomicBool::new(false);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs.max(1))
        .build()
        .map_err(|e| ExtractError::Pool(e.to_string()))?;
    pool.install(|| {
        todo.par_iter().enumerate().for_each(|(i, thm)| {
            let user_cancel = options.cancel.as_ref().is_some_and(|c| c.load(Ordering::SeqCst));
            let slot = if user_cancel || stop.load(Ordering::SeqCst) {
                if user_cancel {
                    cancelled.store(true, Ordering::SeqCst);
                }
                None
            } else {
                let result = extract_for_theorem(thm, index, gateway, cfg);
                if let Err(ExtractError::Checker(CheckerError::NotFound { .. })) = &result {
                    stop.store(true, Ordering::SeqCst);
                }
                if let Err(ExtractError::Gateway(GatewayError::BudgetExceeded { .. })) = &result {
                    stop.store(true, Ordering::SeqCst);
                }
                Some(result)
            };
            let mut c = committer.lock().expect("committer lock");
            c.pending.insert(i, slot);
            c.drain();
        });
    });
    let mut c = committer.into_inner().expect("committer lock");
    if let Some(fatal) = c.fatal.take() {
        return Err(fatal);
    }
    c.summary.cancelled = cancelled.load(Ordering::SeqCst);
    Ok(c.summary)
}
