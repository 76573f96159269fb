mod commands;
mod config;

use std::io::IsTerminal;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lemma_miner_core::evaluation::ReportFormat;
use lemma_miner_core::gateway::Mode;
use tracing_subscriber::EnvFilter;

use commands::Status;
use config::{ConfigError, ProjectConfig, RunConfig};

/// Mine reusable lemmas from LLM proofs of Rocq theorems and measure how
/// much they help CoqHammer.
#[derive(Debug, Parser)]
#[command(name = "lemma-miner", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Index the projects' theorems and definitions.
    Scan(Overrides),
    /// Mine verified lemmas into the store.
    Extract(Overrides),
    /// Run the prover with and without mined lemmas, fold by fold.
    Eval(Overrides),
    /// Render the report from recorded outcomes.
    Report {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
    },
    /// Check that the cassette covers a replayed extraction.
    ReplayCheck(Overrides),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Markdown,
    Csv,
}

#[derive(Debug, Args)]
struct Overrides {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Project root; repeat for several. Replaces the configured projects.
    #[arg(long = "project")]
    projects: Vec<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    cassette: Option<PathBuf>,
    /// Proof-agent round limit.
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-run limit for the checker and the prover.
    #[arg(long)]
    timeout_secs: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    filter_redundant: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Overrides {
    fn resolve(&self, projects: bool, gateway: bool) -> Result<RunConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if !self.projects.is_empty() {
            cfg.projects = self
                .projects
                .iter()
                .map(|root| ProjectConfig {
                    root: root.clone(),
                    name: None,
                    globs: Vec::new(),
                    sample: None,
                })
                .collect();
        }
        if let Some(m) = self.mode {
            cfg.gateway.mode = m;
        }
        if let Some(c) = &self.cassette {
            cfg.gateway.cassette = Some(c.clone());
        }
        if let Some(r) = self.rounds {
            cfg.extract.round_limit = r;
        }
        if let Some(k) = self.folds {
            cfg.eval.folds = k;
        }
        if let Some(s) = self.seed {
            cfg.eval.seed = s;
        }
        if let Some(t) = self.timeout_secs {
            cfg.extract.check_timeout_secs = t;
            cfg.eval.timeout_secs = t;
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        if self.filter_redundant {
            cfg.eval.filter_redundant = true;
        }
        if let Some(o) = &self.out_dir {
            cfg.out_dir = o.clone();
        }
        cfg.validate(projects, gateway)?;
        cfg.absolutize();
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    let cli = Cli::parse();

    let cancel = Arc::new(AtomicBool::new(false));
    {
        let cancel = Arc::clone(&cancel);
        if let Err(e) = ctrlc::set_handler(move || {
            eprintln!("interrupt: finishing running work");
            cancel.store(true, Ordering::SeqCst);
        }) {
            tracing::warn!("no interrupt handler: {e}");
        }
    }

    let overrides = match &cli.command {
        Command::Scan(o)
        | Command::Extract(o)
        | Command::Eval(o)
        | Command::ReplayCheck(o)
        | Command::Report { overrides: o, .. } => o,
    };
    let (projects, gateway) = match &cli.command {
        Command::Scan(_) | Command::Eval(_) => (true, false),
        Command::Extract(_) | Command::ReplayCheck(_) => (true, true),
        Command::Report { .. } => (false, false),
    };
    let cfg = match overrides.resolve(projects, gateway) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Scan(_) => commands::cmd_scan(&cfg),
        Command::Extract(_) => commands::cmd_extract(&cfg, &cancel),
        Command::Eval(_) => commands::cmd_eval(&cfg, &cancel),
        Command::Report { format, .. } => commands::cmd_report(
            &cfg,
            match format {
                Format::Markdown => ReportFormat::Markdown,
                Format::Csv => ReportFormat::Csv,
            },
        ),
        Command::ReplayCheck(_) => commands::cmd_replay_check(&cfg, &cancel),
    };
    match result {
        Ok(Status::Complete) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
