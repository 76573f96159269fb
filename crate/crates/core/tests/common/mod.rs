#![allow(dead_code)]

use std::path::{Path, PathBuf};

use lemma_miner_core::agent::CheckerCommand;
use lemma_miner_core::corpus::{scan_project, CorpusIndex};

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixture_dir(name: &str) -> PathBuf {
    repo_root().join("fixtures").join(name)
}

pub fn fixture(name: &str) -> CorpusIndex {
    scan_project(&fixture_dir(name), &[]).unwrap()
}

/// A working Rocq checker: `$LEMMA_MINER_CHECKER`, `coqc`, or the jsCoq
/// shim when its runner is installed.
pub fn checker() -> Option<CheckerCommand> {
    if let Some(c) = CheckerCommand::discover() {
        return Some(c);
    }
    let cli = std::env::var("JSCOQ_CLI")
        .unwrap_or_else(|_| "/opt/jscoq/node_modules/jscoq/dist-cli/cli.cjs".into());
    let shim = repo_root().join("scripts/jscoqc");
    (Path::new(&cli).exists() && shim.exists())
        .then(|| CheckerCommand::new(shim.display().to_string()))
}

pub fn checker_or_skip(test: &str) -> Option<CheckerCommand> {
    let c = checker();
    if c.is_none() {
        eprintln!("{test}: no Rocq checker available, skipped");
    }
    c
}
