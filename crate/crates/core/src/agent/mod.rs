//! The check, classify and fix loop for candidate lemmas.

mod checker;
mod classify;
mod fix;

use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;
use tracing::debug;

pub use checker::{
    check_lemma, import_sentences, CheckContext, CheckOutcome, CheckStatus, CheckerCommand,
    CheckerError, RunResult, CHECKER_ENV,
};
pub use classify::{
    classify_error, error_location, missing_reference, primary_message, ErrorClass,
    TIMEOUT_MARKER,
};
pub use fix::{apply_fix_reply, build_fix_prompt, fix, guidance, FIX_SYSTEM};

use crate::extraction::CandidateLemma;
use crate::gateway::{Gateway, GatewayError, GenerationParams};

pub const DEFAULT_ROUND_LIMIT: usize = 8;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Checker(#[from] CheckerError),
}

pub trait Checker: Send + Sync {
    fn check(&self, lemma: &CandidateLemma) -> Result<CheckOutcome, CheckerError>;
}

pub trait Fixer: Send + Sync {
    fn fix(
        &self,
        lemma: &CandidateLemma,
        outcome: &CheckOutcome,
        class: ErrorClass,
    ) -> Result<CandidateLemma, GatewayError>;
}

/// Checks in a fresh directory under `sandbox_root` for every call.
#[derive(Debug, Clone)]
pub struct CoqChecker {
    pub command: CheckerCommand,
    pub context: CheckContext,
    pub sandbox_root: PathBuf,
    pub timeout: Duration,
}

impl Checker for CoqChecker {
    fn check(&self, lemma: &CandidateLemma) -> Result<CheckOutcome, CheckerError> {
        let sandbox = tempfile::Builder::new()
            .prefix("check-")
            .tempdir_in(&self.sandbox_root)
            .map_err(|source| CheckerError::SandboxIo {
                path: self.sandbox_root.display().to_string(),
                source,
            })?;
        check_lemma(&self.command, &self.context, lemma, sandbox.path(), self.timeout)
    }
}

pub struct LlmFixer<'a> {
    pub gateway: &'a Gateway,
    pub params: GenerationParams,
}

impl Fixer for LlmFixer<'_> {
    fn fix(
        &self,
        lemma: &CandidateLemma,
        outcome: &CheckOutcome,
        class: ErrorClass,
    ) -> Result<CandidateLemma, GatewayError> {
        fix(lemma, outcome, class, self.gateway, &self.params)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentRun {
    /// The accepted form of the lemma, if any round succeeded.
    pub verified: Option<CandidateLemma>,
    pub checks: usize,
    pub fixes: usize,
}

impl AgentRun {
    /// Rounds used by a verified lemma: the number of checks performed.
    pub fn rounds_used(&self) -> Option<usize> {
        self.verified.as_ref().map(|_| self.checks)
    }
}

/// Checks `lemma` up to `round_limit` times, repairing it after each failed
/// check except the last.
pub fn prove_agent(
    lemma: &CandidateLemma,
    round_limit: usize,
    checker: &dyn Checker,
    fixer: &dyn Fixer,
) -> Result<AgentRun, AgentError> {
    assert!(round_limit >= 1, "round_limit must be at least 1");
    let mut current = lemma.clone();
    let mut fixes = 0;
    for round in 1..=round_limit {
        let outcome = checker.check(&current)?;
        if outcome.is_success() {
            return Ok(AgentRun {
                verified: Some(current),
                checks: round,
                fixes,
            });
        }
        let class = classify_error(outcome.error_text.as_deref().unwrap_or_default());
        debug!(lemma = %current.name, round, %class, "check failed");
        if round == round_limit {
            break;
        }
        current = fixer.fix(&current, &outcome, class)?;
        fixes += 1;
    }
    Ok(AgentRun {
        verified: None,
        checks: round_limit,
        fixes,
    })
}
