use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::agent::{CheckerCommand, CheckerError};

const TARGET_FILE: &str = "Target.v";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalResult {
    Proved,
    Failed,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HammerRun {
    pub result: EvalResult,
    pub wall_ms: u64,
    pub output: String,
}

/// Checks `file_text` in `sandbox`. Proved means the checker accepted the
/// whole file in time.
pub fn run_hammer(
    command: &CheckerCommand,
    file_text: &str,
    sandbox: &Path,
    timeout: Duration,
) -> Result<HammerRun, CheckerError> {
    let file = sandbox.join(TARGET_FILE);
    fs::write(&file, file_text).map_err(|source| CheckerError::SandboxIo {
        path: file.display().to_string(),
        source,
    })?;
    let run = command.run(sandbox, TARGET_FILE, timeout)?;
    let result = match (run.timed_out, run.exit_code) {
        (true, _) => EvalResult::Timeout,
        (false, Some(0)) => EvalResult::Proved,
        _ => EvalResult::Failed,
    };
    Ok(HammerRun {
        result,
        wall_ms: run.elapsed.as_millis() as u64,
        output: run.output,
    })
}
