use std::fs;
use std::path::Path;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use lemma_miner_core::agent::CheckerCommand;
use lemma_miner_core::corpus::{read_coq_project, scan_project_named, CorpusIndex};
use lemma_miner_core::evaluation::{
    aggregate, evaluate, make_folds, read_outcomes, render_report, EvalConfig, EvalReport,
    InjectOptions, ReportFormat,
};
use lemma_miner_core::extraction::{extract_batch, BatchOptions, BatchSummary, ExtractConfig};
use lemma_miner_core::gateway::{Cassette, Gateway, Mode, RateLimiter, RoutedProvider};
use lemma_miner_core::store::LemmaStore;
use tracing::{info, warn};

use crate::config::{RunConfig, EFFECTIVE_CONFIG};

pub const INDEX_FILE: &str = "index.jsonl";
pub const STORE_FILE: &str = "store.jsonl";
pub const TELEMETRY_FILE: &str = "telemetry.jsonl";
pub const OUTCOMES_FILE: &str = "outcomes.jsonl";
pub const FOLDS_FILE: &str = "folds.json";
pub const REPORT_MD: &str = "report.md";
pub const REPORT_CSV: &str = "report.csv";

/// How a command finished when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Complete,
    Partial,
}

pub fn prepare_out_dir(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    fs::write(cfg.out(EFFECTIVE_CONFIG), cfg.to_toml())
        .with_context(|| format!("writing {}", cfg.out(EFFECTIVE_CONFIG).display()))
}

pub fn scan_all(cfg: &RunConfig) -> Result<Vec<CorpusIndex>> {
    cfg.projects
        .iter()
        .map(|p| {
            let name = p.name.clone().unwrap_or_else(|| {
                p.root
                    .canonicalize()
                    .ok()
                    .and_then(|r| r.file_name().map(|n| n.to_string_lossy().into_owned()))
                    .unwrap_or_else(|| "project".into())
            });
            let mut index = scan_project_named(&name, &p.root, &p.globs)
                .with_context(|| format!("corpus: scanning {}", p.root.display()))?;
            for w in &index.warnings {
                warn!(project = %name, "{w}");
            }
            if let Some(n) = p.sample {
                index.sample_theorems(n, cfg.eval.seed);
            }
            Ok(index)
        })
        .collect()
}

/// The configured or discovered checker, with the load paths of every
/// project.
fn checker(cfg: &RunConfig) -> Result<CheckerCommand> {
    let base = match &cfg.checker.program {
        Some(program) => CheckerCommand::new(program.clone()),
        None => match CheckerCommand::discover() {
            Some(c) => c,
            None => bail!("proof-agent: no Rocq checker found (set checker.program, $LEMMA_MINER_CHECKER, or put coqc on PATH)"),
        },
    };
    let mut args = base.args.clone();
    args.extend(cfg.checker.args.iter().cloned());
    for p in &cfg.projects {
        if let Some(project) = read_coq_project(&p.root) {
            args.extend(project.checker_flags(&p.root.canonicalize().unwrap_or(p.root.clone())));
        }
    }
    Ok(CheckerCommand::new(base.program).with_args(args))
}

fn gateway(cfg: &RunConfig, mode: Mode) -> Result<Gateway> {
    let cassette = match (&cfg.gateway.cassette, mode) {
        (Some(path), Mode::Replay) => Some(Cassette::load(path).context("llm-gateway")?),
        (Some(path), _) => Some(Cassette::open_append(path).context("llm-gateway")?),
        (None, _) => None,
    };
    let mut builder = Gateway::builder(mode)
        .limiter(RateLimiter::per_minute(
            cfg.gateway.requests_per_minute,
            cfg.gateway.max_concurrent,
        ))
        .token_ceiling(cfg.gateway.token_budget);
    if let Some(c) = cassette {
        builder = builder.cassette(c);
    }
    if mode != Mode::Replay {
        builder = builder.provider(Arc::new(RoutedProvider::new(Duration::from_secs(
            cfg.gateway.request_timeout_secs,
        ))));
    }
    Ok(builder.build())
}

pub fn cmd_scan(cfg: &RunConfig) -> Result<Status> {
    prepare_out_dir(cfg)?;
    let indexes = scan_all(cfg)?;
    let mut buf = Vec::new();
    for index in &indexes {
        index.write_jsonl(&mut buf).context("corpus: writing index")?;
    }
    fs::write(cfg.out(INDEX_FILE), buf).context("corpus: writing index")?;
    println!("| Project | Files | Theorems | Proved | Definitions | Tactics |");
    println!("|---|---|---|---|---|---|");
    for index in &indexes {
        println!(
            "| {} | {} | {} | {} | {} | {} |",
            index.project,
            index.files.len(),
            index.theorems.len(),
            index.proved_theorems().count(),
            index.definitions.len(),
            index.total_tactics()
        );
    }
    Ok(Status::Complete)
}

/// Extraction over every project into `out_dir`, with the given gateway.
fn extract_into(
    cfg: &RunConfig,
    gateway: &Gateway,
    out_dir: &Path,
    cancel: &Arc<AtomicBool>,
) -> Result<BatchSummary> {
    let indexes = scan_all(cfg)?;
    let checker = checker(cfg)?;
    let store = LemmaStore::open(&out_dir.join(STORE_FILE)).context("lemma-store")?;
    let telemetry = out_dir.join(TELEMETRY_FILE);
    let mut total = BatchSummary::default();
    for index in &indexes {
        let mut ecfg = ExtractConfig::new(
            &cfg.models.extraction,
            &cfg.models.agent,
            checker.clone(),
            out_dir.join("sandbox"),
        );
        ecfg.round_limit = cfg.extract.round_limit;
        ecfg.context_budget = cfg.extract.context_budget;
        ecfg.depth_limit = cfg.extract.depth_limit;
        ecfg.check_timeout = Duration::from_secs(cfg.extract.check_timeout_secs);
        let theorems = index.selected_theorems(cfg.extract.include_admitted);
        let options = BatchOptions {
            jobs: cfg.jobs,
            telemetry_path: Some(&telemetry),
            cancel: Some(Arc::clone(cancel)),
        };
        let s = extract_batch(&theorems, index, gateway, &store, &ecfg, &options)
            .with_context(|| format!("extraction: project {}", index.project))?;
        total.processed += s.processed;
        total.resumed += s.resumed;
        total.lemmas_added += s.lemmas_added;
        total.duplicates += s.duplicates;
        total.failed.extend(s.failed);
        total.cancelled |= s.cancelled;
        if s.cancelled {
            break;
        }
    }
    let _ = fs::remove_dir(out_dir.join("sandbox"));
    Ok(total)
}

pub fn cmd_extract(cfg: &RunConfig, cancel: &Arc<AtomicBool>) -> Result<Status> {
    prepare_out_dir(cfg)?;
    let gateway = gateway(cfg, cfg.gateway.mode)?;
    let summary = extract_into(cfg, &gateway, &cfg.out_dir, cancel)?;
    println!(
        "processed {} theorems ({} already done), {} lemmas added, {} duplicates, {} failed",
        summary.processed,
        summary.resumed,
        summary.lemmas_added,
        summary.duplicates,
        summary.failed.len()
    );
    println!(
        "llm calls: {} live, {} tokens",
        gateway.live_calls(),
        gateway.tokens_used()
    );
    for (id, err) in &summary.failed {
        println!("failed: {id}: {err}");
    }
    if summary.cancelled {
        println!("interrupted; rerun to resume");
    }
    let complete = summary.failed.is_empty() && !summary.cancelled;
    Ok(if complete { Status::Complete } else { Status::Partial })
}

fn write_report(cfg: &RunConfig, report: &EvalReport) -> Result<String> {
    let md = render_report(report, ReportFormat::Markdown);
    fs::write(cfg.out(REPORT_MD), &md).context("evaluation: writing report")?;
    fs::write(cfg.out(REPORT_CSV), render_report(report, ReportFormat::Csv))
        .context("evaluation: writing report")?;
    Ok(md)
}

pub fn cmd_eval(cfg: &RunConfig, cancel: &Arc<AtomicBool>) -> Result<Status> {
    prepare_out_dir(cfg)?;
    let indexes = scan_all(cfg)?;
    let store = LemmaStore::load(&cfg.out(STORE_FILE)).context("lemma-store")?;
    let ids: Vec<String> = indexes
        .iter()
        .flat_map(|i| i.proved_theorems().map(|t| t.id.clone()))
        .collect();
    let plan = make_folds(&ids, cfg.eval.folds, cfg.eval.seed).context("evaluation")?;
    fs::write(
        cfg.out(FOLDS_FILE),
        serde_json::to_string_pretty(&plan).expect("plan serializes"),
    )
    .context("evaluation: writing folds")?;

    let mut ecfg = EvalConfig::new(checker(cfg)?, cfg.out("sandbox"));
    ecfg.timeout = Duration::from_secs(cfg.eval.timeout_secs);
    ecfg.jobs = cfg.jobs;
    ecfg.filter_redundant = cfg.eval.filter_redundant;
    ecfg.outcomes_path = Some(cfg.out(OUTCOMES_FILE));
    ecfg.files_dir = Some(cfg.out("files"));
    ecfg.cancel = Some(Arc::clone(cancel));
    let defaults = InjectOptions::default();
    ecfg.inject = InjectOptions {
        header: cfg.eval.header.clone().unwrap_or(defaults.header),
        stub: cfg.eval.stub.clone().unwrap_or(defaults.stub),
    };
    let run = evaluate(&indexes, &store, &plan, &ecfg).context("evaluation")?;
    let _ = fs::remove_dir(cfg.out("sandbox"));
    print!("{}", write_report(cfg, &run.report)?);
    for e in &run.sandbox_errors {
        println!("sandbox error: {e}");
    }
    if run.cancelled {
        println!("interrupted; rerun to resume");
    }
    let complete = run.sandbox_errors.is_empty() && !run.cancelled;
    Ok(if complete { Status::Complete } else { Status::Partial })
}

pub fn cmd_report(cfg: &RunConfig, format: ReportFormat) -> Result<Status> {
    let path = cfg.out(OUTCOMES_FILE);
    if !path.exists() {
        bail!("evaluation: {} not found; run eval first", path.display());
    }
    let outcomes = read_outcomes(&path).context("evaluation")?;
    let projects: Vec<String> = cfg
        .projects
        .iter()
        .filter_map(|p| {
            p.name.clone().or_else(|| {
                p.root
                    .canonicalize()
                    .ok()
                    .and_then(|r| r.file_name().map(|n| n.to_string_lossy().into_owned()))
            })
        })
        .collect();
    let report = aggregate(&outcomes, &projects);
    write_report(cfg, &report)?;
    print!("{}", render_report(&report, format));
    Ok(Status::Complete)
}

/// Replays extraction into a scratch directory and lists the transcripts
/// the cassette lacks.
pub fn cmd_replay_check(cfg: &RunConfig, cancel: &Arc<AtomicBool>) -> Result<Status> {
    let Some(cassette) = &cfg.gateway.cassette else {
        bail!("llm-gateway: no cassette configured");
    };
    let gateway = gateway(cfg, Mode::Replay)?;
    let scratch = tempfile::tempdir().context("replay-check: scratch directory")?;
    let summary = extract_into(cfg, &gateway, scratch.path(), cancel)?;
    let misses = gateway.replay_misses();
    let entries = gateway.cassette().map_or(0, Cassette::len);
    info!(processed = summary.processed, "replayed");
    if misses.is_empty() && summary.failed.is_empty() {
        println!(
            "ok: {} covers the run ({} entries, {} theorems)",
            cassette.display(),
            entries,
            summary.processed
        );
        return Ok(Status::Complete);
    }
    for key in &misses {
        println!("missing: {key}");
    }
    for (id, err) in &summary.failed {
        println!("failed: {id}: {err}");
    }
    Ok(Status::Partial)
}
