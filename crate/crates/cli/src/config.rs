//! Pipeline configuration: one JSON document. Relative paths resolve
//! against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use raven_core::categorize::DEFAULT_TOP_K;
use raven_core::clock::{Clock, FixedClock, SystemClock};
use raven_core::eval::MatchConfig;
use raven_core::extract::DEFAULT_MAX_EXAMPLES_INLINE;
use raven_core::gateway::{
    Gateway, HttpProvider, HttpProviderConfig, ModelIds, Provider, RetryPolicy, StubProvider, TokenBucket,
};
use raven_core::index::DEFAULT_MIN_SIMILARITY;
use raven_core::templates;

use crate::error::CliError;

/// Stamp used for `created_at` on stub runs without an explicit one.
pub const STUB_TIMESTAMP: &str = "2024-01-01T00:00:00Z";

pub const DEFAULT_METHODS: [&str; 5] = ["ours", "speech", "ocr", "caption", "yolo"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Stub,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSettings {
    pub kind: ProviderKind,
    /// Stub only: the canned responses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub models: Option<ModelIds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_s: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requests_per_minute: Option<u32>,
}

impl Default for ProviderSettings {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Stub,
            fixture_path: None,
            base_url: None,
            api_key_env: None,
            models: None,
            timeout_s: None,
            requests_per_minute: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplatePaths {
    pub categorize: Option<PathBuf>,
    pub canonicalize: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub extract: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub provider: ProviderSettings,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub k_top_categories: usize,
    pub min_similarity: f64,
    pub max_examples_inline: usize,
    pub templates: TemplatePaths,
    pub store_root: PathBuf,
    pub max_failure_rate: f64,
    pub generic_entities: bool,
    pub text_sidechannel: bool,
    #[serde(rename = "match")]
    pub match_config: MatchConfig,
    pub methods: Vec<String>,
    /// fsync after every appended record.
    pub fsync: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_timestamp: Option<DateTime<Utc>>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            provider: ProviderSettings::default(),
            max_in_flight: 8,
            retry: RetryPolicy::default(),
            k_top_categories: DEFAULT_TOP_K,
            min_similarity: DEFAULT_MIN_SIMILARITY,
            max_examples_inline: DEFAULT_MAX_EXAMPLES_INLINE,
            templates: TemplatePaths::default(),
            store_root: PathBuf::from("raven-store"),
            max_failure_rate: 0.2,
            generic_entities: true,
            text_sidechannel: true,
            match_config: MatchConfig::default(),
            methods: DEFAULT_METHODS.map(String::from).to_vec(),
            fsync: true,
            fixed_timestamp: None,
        }
    }
}

/// Prompt templates after loading any overrides.
#[derive(Debug, Clone)]
pub struct Templates {
    pub categorize: String,
    pub canonicalize: String,
    pub schema: String,
    pub extract: String,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.store_root);
        if let Some(p) = self.provider.fixture_path.as_mut() {
            join(p);
        }
        for p in [
            &mut self.templates.categorize,
            &mut self.templates.canonicalize,
            &mut self.templates.schema,
            &mut self.templates.extract,
        ]
        .into_iter()
        .flatten()
        {
            join(p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(1..=256).contains(&self.max_in_flight) {
            return bad(format!("max_in_flight must be in 1..=256, got {}", self.max_in_flight));
        }
        if self.k_top_categories == 0 {
            return bad("k_top_categories must be positive".into());
        }
        if !(-1.0..=1.0).contains(&self.min_similarity) {
            return bad(format!("min_similarity must be in [-1, 1], got {}", self.min_similarity));
        }
        if self.max_examples_inline > 50 {
            return bad("max_examples_inline must be at most 50".into());
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return bad(format!("max_failure_rate must be in [0, 1], got {}", self.max_failure_rate));
        }
        let m = &self.match_config;
        if !(0.0..=1.0).contains(&m.jaccard) || !(0.0..=1.0).contains(&m.levenshtein) {
            return bad("match thresholds must be in [0, 1]".into());
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        self.retry.validate().map_err(CliError::Config)?;
        let p = &self.provider;
        if p.kind == ProviderKind::Http {
            if p.base_url.is_none() || p.api_key_env.is_none() || p.models.is_none() {
                return bad("http provider needs base_url, api_key_env and models".into());
            }
            if p.fixture_path.is_some() {
                return bad("fixture_path only applies to the stub provider".into());
            }
        }
        if p.requests_per_minute == Some(0) {
            return bad("requests_per_minute must be positive".into());
        }
        Ok(())
    }

    pub fn gateway(&self) -> Result<Gateway, CliError> {
        let p = &self.provider;
        let provider: Arc<dyn Provider> = match p.kind {
            ProviderKind::Stub => match &p.fixture_path {
                Some(path) => Arc::new(StubProvider::from_path(path).map_err(|e| {
                    CliError::Config(format!("cannot load fixture {}: {e}", path.display()))
                })?),
                None => Arc::new(StubProvider::new(Default::default())),
            },
            ProviderKind::Http => {
                let http = HttpProviderConfig {
                    base_url: p.base_url.clone().unwrap_or_default(),
                    api_key_env: p.api_key_env.clone().unwrap_or_default(),
                    models: p.models.clone().expect("validated"),
                    timeout_s: p.timeout_s.unwrap_or(120),
                };
                Arc::new(HttpProvider::new(&http).map_err(CliError::Config)?)
            }
        };
        let mut gateway = Gateway::new(provider, self.retry.clone());
        if let Some(rpm) = p.requests_per_minute {
            gateway = gateway.with_rate_limit(TokenBucket::per_minute(rpm, 1));
        }
        Ok(gateway)
    }

    pub fn clock(&self) -> Box<dyn Clock> {
        match (self.fixed_timestamp, self.provider.kind) {
            (Some(t), _) => Box::new(FixedClock(t)),
            (None, ProviderKind::Stub) => Box::new(FixedClock(
                STUB_TIMESTAMP.parse().expect("valid constant timestamp"),
            )),
            (None, ProviderKind::Http) => Box::new(SystemClock),
        }
    }

    pub fn templates(&self) -> Result<Templates, CliError> {
        let load = |path: &Option<PathBuf>, default: &str| -> Result<String, CliError> {
            match path {
                Some(p) => fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read template {}: {e}", p.display()))),
                None => Ok(default.to_string()),
            }
        };
        let t = Templates {
            categorize: load(&self.templates.categorize, templates::CATEGORIZE)?,
            canonicalize: load(&self.templates.canonicalize, templates::CANONICALIZE)?,
            schema: load(&self.templates.schema, templates::SCHEMA)?,
            extract: load(&self.templates.extract, templates::EXTRACT)?,
        };
        let checks: [(&str, &[&str]); 4] = [
            (&t.categorize, &["media", "steering"]),
            (&t.canonicalize, &["categories"]),
            (&t.schema, &["category"]),
            (&t.extract, &["media", "schema_block"]),
        ];
        for (text, needed) in checks {
            templates::require(text, needed).map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(t)
    }
}
