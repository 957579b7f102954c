//! Pipeline configuration file (TOML).
//!
//! ```toml
//! output_dir = "out"
//!
//! [data]
//! train_csv = "data/train.csv"
//! test_csv = "data/test.csv"
//!
//! [gateway]
//! base_url = "https://api.openai.com"
//! max_parallel_requests = 4
//!
//! [repos."facebook/react"]
//! cleaning_method = "method1"
//! epochs = 3
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;
use triage_core::corpus::ColumnNames;
use triage_core::gateway::{ApiKey, GatewayConfig, DEFAULT_API_KEY_ENV, DEFAULT_BASE_URL};
use triage_core::registry::{Epochs, ModelRegistry, RegistryEntry, DEFAULT_BASE_MODEL};
use triage_core::textclean::{load_blocklist, CleaningConfig, CleaningMethod, DEFAULT_MAX_TOKEN_LEN};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config: {0}")]
    Invalid(String),
    #[error("repository {0:?} has no [repos] section in the config")]
    UnknownRepository(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    #[serde(default)]
    pub columns: ColumnSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnSection {
    pub repository: String,
    pub label: String,
    pub title: String,
    pub body: String,
}

impl Default for ColumnSection {
    fn default() -> Self {
        let c = ColumnNames::default();
        Self { repository: c.repository, label: c.label, title: c.title, body: c.body }
    }
}

impl From<&ColumnSection> for ColumnNames {
    fn from(c: &ColumnSection) -> Self {
        ColumnNames {
            repository: c.repository.clone(),
            label: c.label.clone(),
            title: c.title.clone(),
            body: c.body.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    pub base_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub request_timeout_secs: u64,
    pub max_retries: u32,
    pub poll_interval_secs: f64,
    pub max_parallel_requests: usize,
    pub base_model: String,
}

impl Default for GatewaySection {
    fn default() -> Self {
        Self {
            base_url: DEFAULT_BASE_URL.into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            request_timeout_secs: 60,
            max_retries: 3,
            poll_interval_secs: 1800.0,
            max_parallel_requests: 4,
            base_model: DEFAULT_BASE_MODEL.into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningSection {
    /// Blocklist file (one pattern per line, `re:` prefix for regexes).
    pub blocklist: Option<PathBuf>,
    pub max_token_len: usize,
}

impl Default for CleaningSection {
    fn default() -> Self {
        Self { blocklist: None, max_token_len: DEFAULT_MAX_TOKEN_LEN }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSection {
    pub system_message: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub alpha: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepoSection {
    pub cleaning_method: CleaningMethod,
    #[serde(default)]
    pub epochs: Epochs,
    pub model_id: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub data: DataSection,
    #[serde(default)]
    pub gateway: GatewaySection,
    #[serde(default)]
    pub cleaning: CleaningSection,
    #[serde(default)]
    pub prompt: PromptSection,
    #[serde(default)]
    pub baseline: BaselineSection,
    pub repos: BTreeMap<String, RepoSection>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_owned(), source })?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            ConfigError::Invalid(message) => ConfigError::Parse { path: path.to_owned(), message },
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.repos.is_empty() {
            return Err(ConfigError::Invalid("at least one [repos.\"owner/name\"] section is required".into()));
        }
        if let Some(repo) = self.repos.keys().find(|r| r.trim().is_empty() || r.trim() != r.as_str()) {
            return Err(ConfigError::Invalid(format!("bad repository name {repo:?}")));
        }
        if let Some((repo, _)) = self.repos.iter().find(|(_, r)| r.epochs == Epochs::Fixed(0)) {
            return Err(ConfigError::Invalid(format!("{repo}: epochs must be at least 1")));
        }
        if self.cleaning.max_token_len == 0 {
            return Err(ConfigError::Invalid("cleaning.max_token_len must be at least 1".into()));
        }
        if !(self.baseline.alpha > 0.0 && self.baseline.alpha.is_finite()) {
            return Err(ConfigError::Invalid("baseline.alpha must be positive".into()));
        }
        let g = &self.gateway;
        if g.max_parallel_requests == 0 {
            return Err(ConfigError::Invalid("gateway.max_parallel_requests must be at least 1".into()));
        }
        if !(g.poll_interval_secs > 0.0 && g.poll_interval_secs.is_finite()) {
            return Err(ConfigError::Invalid("gateway.poll_interval_secs must be positive".into()));
        }
        if g.request_timeout_secs == 0 {
            return Err(ConfigError::Invalid("gateway.request_timeout_secs must be positive".into()));
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.output_dir);
        if let Some(p) = self.data.train_csv.as_mut() {
            join(p);
        }
        if let Some(p) = self.data.test_csv.as_mut() {
            join(p);
        }
        if let Some(p) = self.cleaning.blocklist.as_mut() {
            join(p);
        }
    }

    pub fn repo(&self, repository: &str) -> Result<&RepoSection, ConfigError> {
        self.repos.get(repository).ok_or_else(|| ConfigError::UnknownRepository(repository.to_string()))
    }

    pub fn cleaning_config(&self, method: CleaningMethod) -> anyhow::Result<CleaningConfig> {
        let mut cfg = CleaningConfig::new(method).with_max_token_len(self.cleaning.max_token_len);
        if let Some(path) = &self.cleaning.blocklist {
            cfg = cfg.with_blocklist(load_blocklist(path)?);
        }
        Ok(cfg)
    }

    /// Gateway settings; the key is read from the configured environment variable.
    pub fn gateway_config(&self) -> Result<GatewayConfig, ConfigError> {
        let g = &self.gateway;
        let mut cfg = GatewayConfig::new(&g.base_url).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.api_key = ApiKey::from_env(&g.api_key_env);
        cfg.request_timeout = Duration::from_secs(g.request_timeout_secs);
        cfg.max_retries = g.max_retries;
        cfg.poll_interval = Duration::from_secs_f64(g.poll_interval_secs);
        cfg.max_parallel_requests = g.max_parallel_requests;
        Ok(cfg)
    }

    /// Registry entries as declared in the config.
    pub fn declared_registry(&self) -> ModelRegistry {
        let mut reg = ModelRegistry::new();
        for (repo, r) in &self.repos {
            reg.insert(
                repo.clone(),
                RegistryEntry { model_id: r.model_id.clone(), cleaning_method: r.cleaning_method, epochs: r.epochs },
            );
        }
        reg
    }

    pub fn registry_path(&self) -> PathBuf {
        self.output_dir.join("registry.toml")
    }

    /// Declared entries, with model ids filled in from the registry file when
    /// it was produced for the same cleaning method and epoch count.
    pub fn effective_registry(&self) -> anyhow::Result<ModelRegistry> {
        let mut reg = self.declared_registry();
        let path = self.registry_path();
        if !path.exists() {
            return Ok(reg);
        }
        let saved = ModelRegistry::load(&path)?;
        for (repo, entry) in saved.iter() {
            let Some(current) = reg.get_mut(repo) else { continue };
            if current.model_id.is_some() {
                continue;
            }
            let Some(id) = &entry.model_id else { continue };
            if entry.cleaning_method == current.cleaning_method && entry.epochs == current.epochs {
                current.model_id = Some(id.clone());
            } else {
                log::warn!(
                    "{repo}: ignoring saved model {id}, trained with {} / {} epochs but the config asks for {} / {}",
                    entry.cleaning_method.as_str(),
                    entry.epochs,
                    current.cleaning_method.as_str(),
                    current.epochs
                );
            }
        }
        Ok(reg)
    }
}
