use std::fs::{self, File};
use std::io;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;
use wait_timeout::ChildExt;

use super::classify::{error_location, TIMEOUT_MARKER};
use crate::corpus::sentence::{closing_sentences, split_sentences};
use crate::corpus::{CorpusIndex, TheoremRecord};
use crate::extraction::CandidateLemma;
use crate::retrieval::statement_dependencies;

pub const CHECKER_ENV: &str = "LEMMA_MINER_CHECKER";
const CHECK_FILE: &str = "Check.v";

#[derive(Debug, Error)]
pub enum CheckerError {
    #[error("checker executable {program:?} not found")]
    NotFound { program: String },
    #[error("sandbox {path}: {source}")]
    SandboxIo {
        path: String,
        #[source]
        source: io::Error,
    },
}

fn sandbox_err(path: &Path) -> impl FnOnce(io::Error) -> CheckerError + '_ {
    move |source| CheckerError::SandboxIo {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub status: CheckStatus,
    pub error_text: Option<String>,
    pub location: Option<(u32, u32)>,
}

impl CheckOutcome {
    pub fn success() -> Self {
        Self {
            status: CheckStatus::Success,
            error_text: None,
            location: None,
        }
    }

    pub fn failure(error_text: impl Into<String>) -> Self {
        let error_text = error_text.into();
        Self {
            status: CheckStatus::Failure,
            location: error_location(&error_text),
            error_text: Some(error_text),
        }
    }

    pub fn is_success(&self) -> bool {
        self.status == CheckStatus::Success
    }
}

/// Raw result of running the checker on one file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunResult {
    pub exit_code: Option<i32>,
    pub output: String,
    pub timed_out: bool,
    pub elapsed: Duration,
}

/// The checker executable and the flags placed before the file argument.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckerCommand {
    pub program: String,
    pub args: Vec<String>,
}

impl CheckerCommand {
    pub fn new(program: impl Into<String>) -> Self {
        Self {
            program: program.into(),
            args: Vec::new(),
        }
    }

    pub fn with_args(mut self, args: impl IntoIterator<Item = String>) -> Self {
        self.args.extend(args);
        self
    }

    /// `$LEMMA_MINER_CHECKER` (program and leading arguments, separated by
    /// whitespace), else `coqc` from `PATH`.
    pub fn discover() -> Option<Self> {
        if let Ok(spec) = std::env::var(CHECKER_ENV) {
            let mut words = spec.split_whitespace().map(str::to_string);
            if let Some(program) = words.next() {
                return Some(Self::new(program).with_args(words));
            }
        }
        find_on_path("coqc").map(|p| Self::new(p.display().to_string()))
    }

    /// Runs the checker on `file` from inside `dir`, killing it after
    /// `timeout`. Stdout and stderr are captured together.
    pub fn run(&self, dir: &Path, file: &str, timeout: Duration) -> Result<RunResult, CheckerError> {
        let out_path = dir.join(".checker-output");
        let out = File::create(&out_path).map_err(sandbox_err(&out_path))?;
        let err = out.try_clone().map_err(sandbox_err(&out_path))?;
        let start = Instant::now();
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .arg(file)
            .current_dir(dir)
            .stdin(Stdio::null())
            .stdout(out)
            .stderr(err)
            .spawn()
            .map_err(|e| match e.kind() {
                io::ErrorKind::NotFound | io::ErrorKind::PermissionDenied => {
                    CheckerError::NotFound {
                        program: self.program.clone(),
                    }
                }
                _ => CheckerError::SandboxIo {
                    path: dir.display().to_string(),
                    source: e,
                },
            })?;
        let status = child
            .wait_timeout(timeout)
            .map_err(sandbox_err(dir))?;
        let (exit_code, timed_out) = match status {
            Some(s) => (s.code(), false),
            None => {
                let _ = child.kill();
                let _ = child.wait();
                (None, true)
            }
        };
        let elapsed = start.elapsed();
        let output = fs::read(&out_path).map_err(sandbox_err(&out_path))?;
        let _ = fs::remove_file(&out_path);
        Ok(RunResult {
            exit_code,
            output: String::from_utf8_lossy(&output).into_owned(),
            timed_out,
            elapsed,
        })
    }
}

fn find_on_path(name: &str) -> Option<PathBuf> {
    let path = std::env::var_os("PATH")?;
    std::env::split_paths(&path)
        .map(|dir| dir.join(name))
        .find(|candidate| candidate.is_file())
}

/// What a candidate is checked against: the source file's import sentences
/// and the definitions its source theorem depends on.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckContext {
    pub imports: Vec<String>,
    pub definitions: Vec<String>,
}

const IMPORT_HEADS: &[&str] = &[
    "Require", "Import", "Export", "From", "Open", "Local", "Global", "Set", "Unset",
    "Generalizable",
];

/// Top-level import and option sentences of `text`.
pub fn import_sentences(text: &str) -> Vec<String> {
    split_sentences(text)
        .unwrap_or_default()
        .into_iter()
        .filter(|s| {
            let head = s.core().split_whitespace().next().unwrap_or_default();
            IMPORT_HEADS.contains(&head)
                && (head != "Local" && head != "Global"
                    || s.core().split_whitespace().nth(1).is_some_and(|w| {
                        matches!(w, "Open" | "Set" | "Unset")
                    }))
        })
        .map(|s| s.core().to_string())
        .collect()
}

impl CheckContext {
    pub fn for_theorem(thm: &TheoremRecord, index: &CorpusIndex, depth_limit: usize) -> Self {
        Self {
            imports: import_sentences(index.preceding_text(thm)),
            definitions: statement_dependencies(thm, index, depth_limit),
        }
    }

    /// The standalone file that checks `lemma`: imports, definitions, the
    /// lemma's own preamble, the lemma, then `End` for every block the
    /// preamble left open.
    pub fn render(&self, lemma: &CandidateLemma) -> String {
        let mut out = String::new();
        for part in self.imports.iter().chain(&self.definitions) {
            out.push_str(part.trim_end());
            out.push('\n');
        }
        if !lemma.shared_preamble.trim().is_empty() {
            out.push('\n');
            out.push_str(lemma.shared_preamble.trim_end());
            out.push('\n');
        }
        out.push('\n');
        out.push_str(lemma.statement.trim_end());
        out.push('\n');
        out.push_str(lemma.proof.trim_end());
        out.push('\n');
        out.push_str(&closing_sentences(&lemma.shared_preamble));
        out
    }
}

/// A proof that closes with `Admitted.` or calls `admit` proves nothing.
fn admitted_reason(proof: &str) -> Option<&'static str> {
    let sentences = split_sentences(proof).unwrap_or_default();
    if sentences.iter().any(|s| s.core().trim() == "Admitted.") {
        return Some("Proof is not complete: it ends with Admitted.");
    }
    let uses_admit = sentences.iter().any(|s| {
        crate::corpus::ident::identifiers(s.core())
            .iter()
            .any(|w| w == "admit" || w == "give_up")
    });
    uses_admit.then_some("Proof is not complete: it uses admit.")
}

/// Writes the check file for `lemma` into `sandbox` and runs the checker.
pub fn check_lemma(
    command: &CheckerCommand,
    context: &CheckContext,
    lemma: &CandidateLemma,
    sandbox: &Path,
    timeout: Duration,
) -> Result<CheckOutcome, CheckerError> {
    let file = sandbox.join(CHECK_FILE);
    fs::write(&file, context.render(lemma)).map_err(sandbox_err(&file))?;
    let run = command.run(sandbox, CHECK_FILE, timeout)?;
    debug!(lemma = %lemma.name, exit = ?run.exit_code, elapsed = ?run.elapsed, "checked");
    if run.timed_out {
        return Ok(CheckOutcome::failure(format!(
            "{TIMEOUT_MARKER} checking took longer than {} s",
            timeout.as_secs_f64()
        )));
    }
    if run.exit_code != Some(0) {
        let text = if run.output.trim().is_empty() {
            format!("checker exited with {:?} and no output", run.exit_code)
        } else {
            run.output
        };
        return Ok(CheckOutcome::failure(text));
    }
    Ok(match admitted_reason(&lemma.proof) {
        Some(reason) => CheckOutcome::failure(reason),
        None => CheckOutcome::success(),
    })
}
