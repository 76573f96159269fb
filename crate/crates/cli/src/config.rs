use std::path::{Path, PathBuf};

use lemma_miner_core::gateway::Mode;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: at `{key}`: {message}")]
    Parse {
        path: String,
        key: String,
        message: String,
    },
    #[error("`{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub root: PathBuf,
    /// Defaults to the directory name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub globs: Vec<String>,
    /// Keep a seeded sample of this many proved theorems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub extraction: String,
    pub agent: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            extraction: "claude-3-7-sonnet-20250219".into(),
            agent: "o4-mini".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatewayConfig {
    pub mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cassette: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token_budget: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub requests_per_minute: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_concurrent: Option<usize>,
    pub request_timeout_secs: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Replay,
            cassette: None,
            token_budget: None,
            requests_per_minute: None,
            max_concurrent: None,
            request_timeout_secs: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractSection {
    pub round_limit: usize,
    pub context_budget: usize,
    pub depth_limit: usize,
    pub check_timeout_secs: u64,
    pub include_admitted: bool,
}

impl Default for ExtractSection {
    fn default() -> Self {
        Self {
            round_limit: 8,
            context_budget: 32_000,
            depth_limit: 3,
            check_timeout_secs: 60,
            include_admitted: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub folds: usize,
    pub seed: u64,
    pub timeout_secs: u64,
    pub filter_redundant: bool,
    /// Prover header and stub; the defaults call CoqHammer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub header: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stub: Option<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            folds: 3,
            seed: 0,
            timeout_secs: 60,
            filter_redundant: false,
            header: None,
            stub: None,
        }
    }
}

/// The checker program; `$LEMMA_MINER_CHECKER` or `coqc` when unset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckerSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub program: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub jobs: usize,
    pub projects: Vec<ProjectConfig>,
    pub models: ModelConfig,
    pub gateway: GatewayConfig,
    pub extract: ExtractSection,
    pub eval: EvalSection,
    pub checker: CheckerSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            jobs: 1,
            projects: Vec::new(),
            models: ModelConfig::default(),
            gateway: GatewayConfig::default(),
            extract: ExtractSection::default(),
            eval: EvalSection::default(),
            checker: CheckerSection::default(),
        }
    }
}

pub const EFFECTIVE_CONFIG: &str = "config.toml";

impl RunConfig {
    /// Parses `path`; relative paths inside are taken from its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let mut config = Self::parse(&text).map_err(|(key, message)| ConfigError::Parse {
            path: path.display().to_string(),
            key,
            message,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.rebase(base);
        Ok(config)
    }

    /// `(key path, message)` on failure.
    pub fn parse(text: &str) -> Result<Self, (String, String)> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            (key, e.into_inner().message().trim().to_string())
        })
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        for project in &mut self.projects {
            fix(&mut project.root);
        }
        if let Some(c) = &mut self.gateway.cassette {
            fix(c);
        }
    }

    /// Checks the settings a command relies on: always the numeric limits,
    /// plus the projects and the gateway when asked.
    pub fn validate(&self, projects: bool, gateway: bool) -> Result<(), ConfigError> {
        if self.extract.round_limit < 1 {
            return Err(invalid("extract.round_limit", "must be at least 1"));
        }
        if self.eval.folds < 2 {
            return Err(invalid("eval.folds", "must be at least 2"));
        }
        if self.jobs < 1 {
            return Err(invalid("jobs", "must be at least 1"));
        }
        if projects && self.projects.is_empty() {
            return Err(invalid("projects", "no project given"));
        }
        for (i, p) in self.projects.iter().enumerate() {
            if !p.root.is_dir() {
                return Err(invalid(
                    &format!("projects[{i}].root"),
                    format!("{} is not a directory", p.root.display()),
                ));
            }
        }
        if !gateway {
            return Ok(());
        }
        if self.gateway.mode == Mode::Replay && self.gateway.cassette.is_none() {
            return Err(invalid("gateway.cassette", "replay mode needs a cassette"));
        }
        if self.gateway.mode == Mode::Record && self.gateway.cassette.is_none() {
            return Err(invalid("gateway.cassette", "record mode needs a cassette"));
        }
        if let Some(c) = &self.gateway.cassette {
            if self.gateway.mode == Mode::Replay && !c.is_file() {
                return Err(invalid(
                    "gateway.cassette",
                    format!("{} does not exist", c.display()),
                ));
            }
        }
        Ok(())
    }

    /// Makes every path absolute so the dumped config can be reloaded from
    /// anywhere.
    pub fn absolutize(&mut self) {
        let abs = |p: &mut PathBuf| {
            if let Ok(cwd) = std::env::current_dir() {
                if p.is_relative() {
                    *p = cwd.join(&*p);
                }
            }
            if let Ok(c) = p.canonicalize() {
                *p = c;
            }
        };
        abs(&mut self.out_dir);
        for project in &mut self.projects {
            abs(&mut project.root);
        }
        if let Some(c) = &mut self.gateway.cassette {
            abs(c);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}
