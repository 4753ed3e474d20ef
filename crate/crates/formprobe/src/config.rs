//! Configuration: command-line flags over a config file over defaults.
//! Secrets come from the environment only.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::NaiveDateTime;
use clap::{Args, ValueEnum};
use formprobe_core::embed::{NgramProvider, Node2VecParams, TextEmbedProvider};
use formprobe_core::ferg::{AdjacencyHints, PruningParams, StdMode};
use formprobe_core::llm::DEFAULT_CONTEXT_LIMIT;
use formprobe_core::pipeline::PipelineConfig;
use formprobe_core::submission::FeedbackKeywords;
use serde::{Deserialize, Serialize};

use crate::io::read_text;
use crate::remote::{HttpSettings, RemoteEmbedder};

pub const DEFAULT_API_KEY_ENV: &str = "FORMPROBE_API_KEY";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config file {path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{what} needs an API key in the environment variable {var}")]
    MissingSecret { what: &'static str, var: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    OracleMock,
    ScriptedMock,
    Remote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    Ngram,
    Remote,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteFile {
    pub chat_endpoint: Option<String>,
    pub chat_model: Option<String>,
    pub embed_endpoint: Option<String>,
    pub embed_model: Option<String>,
    pub embed_dims: Option<usize>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub timeout_secs: Option<u64>,
    pub attempts: Option<u32>,
}

/// The config file as written; every entry optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub max_iterations: Option<usize>,
    pub jobs: Option<usize>,
    pub backend: Option<BackendKind>,
    pub script: Option<PathBuf>,
    pub provider: Option<ProviderKind>,
    pub ngram_dims: Option<usize>,
    pub out: Option<PathBuf>,
    pub now: Option<NaiveDateTime>,
    pub context_limit: Option<usize>,
    pub window: Option<usize>,
    pub keywords: Option<Vec<String>>,
    pub pruning: Option<PruningParams>,
    pub node2vec: Option<Node2VecParams>,
    pub remote: RemoteFile,
}

impl FileConfig {
    /// TOML, or JSON when the extension says so.
    pub fn load(path: &Path) -> Result<FileConfig, ConfigError> {
        let text = read_text(path).map_err(|e| ConfigError::File { path: path.into(), message: e.to_string() })?;
        let bad = |message: String| ConfigError::File { path: path.into(), message };
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| bad(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| bad(e.to_string()))
        }
    }
}

/// Flags shared by the commands that build graphs or run pipelines.
#[derive(Clone, Debug, Default, Args)]
pub struct PipelineFlags {
    /// Config file (TOML, or JSON by extension).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for structural embeddings.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cap on submit-and-refine rounds.
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Scripted responses (JSON list) for the scripted mock.
    #[arg(long)]
    pub script: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub provider: Option<ProviderKind>,
    /// Current time shown to the model, e.g. 2024-03-01T09:00:00.
    #[arg(long)]
    pub now: Option<NaiveDateTime>,
    /// Edge-retention factor for text-text pruning.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Use the sample rather than population standard deviation.
    #[arg(long)]
    pub sample_std: bool,
    /// Document-order adjacency window.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub context_limit: Option<usize>,
    /// Feedback keyword; repeat to replace the default list.
    #[arg(long = "keyword")]
    pub keywords: Vec<String>,
    #[arg(long)]
    pub chat_endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub embed_endpoint: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RemoteSettings {
    pub chat_endpoint: String,
    pub chat_model: String,
    pub embed_endpoint: String,
    pub embed_model: String,
    pub embed_dims: usize,
    pub api_key_env: String,
    pub timeout: Duration,
    pub attempts: u32,
}

/// Fully merged and validated configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct CliConfig {
    pub seed: u64,
    pub max_iterations: usize,
    pub jobs: usize,
    pub backend: BackendKind,
    pub script: Option<PathBuf>,
    pub provider: ProviderKind,
    pub ngram_dims: usize,
    pub out: PathBuf,
    pub now: Option<NaiveDateTime>,
    pub context_limit: usize,
    pub hints: AdjacencyHints,
    pub keywords: FeedbackKeywords,
    pub pruning: PruningParams,
    pub node2vec: Node2VecParams,
    pub remote: RemoteSettings,
    pub api_key: Option<String>,
}

impl CliConfig {
    /// Merges flags over `file` over defaults; `env` supplies secrets.
    pub fn resolve(
        flags: &PipelineFlags,
        file: FileConfig,
        jobs: Option<usize>,
        out: Option<PathBuf>,
        env: impl Fn(&str) -> Option<String>,
    ) -> Result<CliConfig, ConfigError> {
        let node2vec = file.node2vec.unwrap_or_default();
        let mut pruning = file.pruning.unwrap_or_default();
        if let Some(l) = flags.lambda {
            pruning.lambda = l;
        }
        if flags.sample_std {
            pruning.std_mode = StdMode::Sample;
        }
        let words = if flags.keywords.is_empty() { file.keywords } else { Some(flags.keywords.clone()) };
        let keywords = match words {
            Some(w) => FeedbackKeywords::new(w).map_err(|e| ConfigError::Invalid(format!("keywords: {e}")))?,
            None => FeedbackKeywords::default(),
        };
        let r = file.remote;
        let remote = RemoteSettings {
            chat_endpoint: flags
                .chat_endpoint
                .clone()
                .or(r.chat_endpoint)
                .unwrap_or_else(|| "https://api.openai.com/v1/chat/completions".into()),
            chat_model: flags.model.clone().or(r.chat_model).unwrap_or_else(|| "gpt-4".into()),
            embed_endpoint: flags
                .embed_endpoint
                .clone()
                .or(r.embed_endpoint)
                .unwrap_or_else(|| "https://api.openai.com/v1/embeddings".into()),
            embed_model: r.embed_model.unwrap_or_else(|| "text-embedding-ada-002".into()),
            embed_dims: r.embed_dims.unwrap_or(1536),
            api_key_env: r.api_key_env.unwrap_or_else(|| DEFAULT_API_KEY_ENV.into()),
            timeout: Duration::from_secs(r.timeout_secs.unwrap_or(60)),
            attempts: r.attempts.unwrap_or(3),
        };
        let api_key = env(&remote.api_key_env).filter(|k| !k.trim().is_empty());
        let cfg = CliConfig {
            seed: flags.seed.or(file.seed).unwrap_or(node2vec.rng_seed),
            max_iterations: flags.max_iterations.or(file.max_iterations).unwrap_or(5),
            jobs: jobs.or(file.jobs).unwrap_or(1),
            backend: flags.backend.or(file.backend).unwrap_or(BackendKind::OracleMock),
            script: flags.script.clone().or(file.script),
            provider: flags.provider.or(file.provider).unwrap_or(ProviderKind::Ngram),
            ngram_dims: file.ngram_dims.unwrap_or(256),
            out: out.or(file.out).unwrap_or_else(|| PathBuf::from("out")),
            now: flags.now.or(file.now),
            context_limit: flags.context_limit.or(file.context_limit).unwrap_or(DEFAULT_CONTEXT_LIMIT),
            hints: AdjacencyHints { boxes: None, window: flags.window.or(file.window).unwrap_or(3) },
            keywords,
            pruning,
            node2vec,
            remote,
            api_key,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads the config file named in `flags`, if any, then resolves.
    pub fn from_flags(
        flags: &PipelineFlags,
        jobs: Option<usize>,
        out: Option<PathBuf>,
        env: impl Fn(&str) -> Option<String>,
    ) -> Result<CliConfig, ConfigError> {
        let file = match &flags.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        CliConfig::resolve(flags, file, jobs, out, env)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.max_iterations == 0 {
            return invalid("max-iterations must be at least 1");
        }
        if self.jobs == 0 {
            return invalid("jobs must be at least 1");
        }
        if self.hints.window == 0 {
            return invalid("window must be at least 1");
        }
        if self.ngram_dims == 0 {
            return invalid("ngram_dims must be at least 1");
        }
        if !self.pruning.lambda.is_finite() {
            return invalid("lambda must be finite");
        }
        self.node2vec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.provider == ProviderKind::Remote {
            self.require_key("the remote embedding provider")?;
        }
        Ok(())
    }

    fn require_key(&self, what: &'static str) -> Result<&str, ConfigError> {
        self.api_key.as_deref().ok_or_else(|| ConfigError::MissingSecret { what, var: self.remote.api_key_env.clone() })
    }

    /// Checks what `generate` additionally needs from its backend choice.
    pub fn require_backend(&self) -> Result<(), ConfigError> {
        match self.backend {
            BackendKind::Remote => self.require_key("the remote backend").map(|_| ()),
            BackendKind::ScriptedMock if self.script.is_none() => {
                Err(ConfigError::Invalid("the scripted mock needs --script".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn chat_settings(&self) -> Result<HttpSettings, ConfigError> {
        Ok(HttpSettings {
            endpoint: self.remote.chat_endpoint.clone(),
            model: self.remote.chat_model.clone(),
            api_key: self.require_key("the remote backend")?.to_string(),
            timeout: self.remote.timeout,
            attempts: self.remote.attempts,
            backoff: Duration::from_millis(500),
        })
    }

    pub fn text_provider(&self) -> Result<Arc<dyn TextEmbedProvider>, ConfigError> {
        Ok(match self.provider {
            ProviderKind::Ngram => Arc::new(NgramProvider::new(self.ngram_dims)),
            ProviderKind::Remote => Arc::new(RemoteEmbedder::new(
                HttpSettings {
                    endpoint: self.remote.embed_endpoint.clone(),
                    model: self.remote.embed_model.clone(),
                    api_key: self.require_key("the remote embedding provider")?.to_string(),
                    timeout: self.remote.timeout,
                    attempts: self.remote.attempts,
                    backoff: Duration::from_millis(500),
                },
                self.remote.embed_dims,
            )),
        })
    }

    pub fn node2vec_params(&self) -> Node2VecParams {
        Node2VecParams { rng_seed: self.seed, ..self.node2vec.clone() }
    }

    pub fn pipeline(&self, now: NaiveDateTime) -> PipelineConfig {
        let mut p = PipelineConfig::new(now);
        p.max_feedback_iterations = self.max_iterations;
        p.pruning = self.pruning.clone();
        p.node2vec = self.node2vec.clone();
        p.hints = self.hints.clone();
        p.keywords = self.keywords.clone();
        p.seed = self.seed;
        p.context_limit = self.context_limit;
        p
    }
}
