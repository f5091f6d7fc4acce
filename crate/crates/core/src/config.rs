//! Run configuration, read from a TOML document.
//!
//! ```toml
//! dataset = "dataset.json"          # paths are relative to this file
//! mode = "vqa-tsp"
//! parallelism = 4
//! results = "out/results.jsonl"
//! ratings = "out/ratings.jsonl"
//! raters_per_item = 3
//! kappa_threshold = 0.60
//!
//! [templates]                       # optional overrides
//! cot = "templates/cot.txt"
//!
//! [backends.context]
//! kind = "http"
//! name = "captioner"
//! base_url = "http://localhost:8001/generate"
//!
//! [backends.completion]
//! kind = "mock"
//! script = "completion.json"
//! ```
//!
//! `VQA_TSP_CONTEXT_URL`, `VQA_TSP_COMPLETION_URL`, `VQA_TSP_CONTEXT_TOKEN`
//! and `VQA_TSP_COMPLETION_TOKEN` override the HTTP backend URLs and bearer
//! tokens.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::backends::{BackendEndpoint, DecodingParams, HttpBackend, MockBackend, MockScript};
use crate::evaluation::DEFAULT_KAPPA_THRESHOLD;
use crate::pipeline::{Backends, PipelineMode};
use crate::prompting::{PromptSet, TemplatePaths};

#[derive(Debug, Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn default_parallelism() -> usize {
    1
}

fn default_raters() -> usize {
    3
}

fn default_threshold() -> f64 {
    DEFAULT_KAPPA_THRESHOLD
}

fn default_timeout() -> f64 {
    60.0
}

fn default_retries() -> u32 {
    3
}

fn default_max_new_tokens() -> u32 {
    256
}

fn default_mock_name() -> String {
    "mock".into()
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    Http {
        name: String,
        base_url: String,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
        #[serde(default = "default_retries")]
        max_retries: u32,
        #[serde(default)]
        temperature: f64,
        #[serde(default = "default_max_new_tokens")]
        max_new_tokens: u32,
        #[serde(default)]
        seed: Option<u64>,
        /// Name of an environment variable holding the bearer token.
        #[serde(default)]
        bearer_token_env: Option<String>,
        #[serde(skip)]
        bearer_token: Option<String>,
    },
    Mock {
        #[serde(default = "default_mock_name")]
        name: String,
        /// JSON mock script, see [`MockScript`].
        script: PathBuf,
    },
}

impl BackendConfig {
    fn build(&self, base: &Path) -> Result<Box<dyn crate::backends::Backend>, ConfigError> {
        match self {
            BackendConfig::Http {
                name,
                base_url,
                timeout_secs,
                max_retries,
                temperature,
                max_new_tokens,
                seed,
                bearer_token,
                ..
            } => {
                if !(*timeout_secs > 0.0 && timeout_secs.is_finite()) {
                    return Err(ConfigError(format!(
                        "backend {name:?}: timeout_secs must be positive"
                    )));
                }
                let endpoint = BackendEndpoint {
                    name: name.clone(),
                    base_url: base_url.clone(),
                    timeout: Duration::from_secs_f64(*timeout_secs),
                    max_retries: *max_retries,
                    decoding: DecodingParams {
                        temperature: *temperature,
                        max_new_tokens: *max_new_tokens,
                        seed: *seed,
                    },
                    bearer_token: bearer_token.clone(),
                };
                let backend = HttpBackend::new(endpoint).map_err(|e| ConfigError(e.to_string()))?;
                Ok(Box::new(backend))
            }
            BackendConfig::Mock { name, script } => {
                let path = base.join(script);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| ConfigError(format!("mock script {}: {e}", path.display())))?;
                let script: MockScript = serde_json::from_str(&text)
                    .map_err(|e| ConfigError(format!("mock script {}: {e}", path.display())))?;
                let backend = MockBackend::new(name.clone(), script)
                    .map_err(|e| ConfigError(e.to_string()))?;
                Ok(Box::new(backend))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct BackendsConfig {
    pub context: BackendConfig,
    pub completion: BackendConfig,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    #[serde(default)]
    pub mode: Option<PipelineMode>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub results: Option<PathBuf>,
    #[serde(default)]
    pub ratings: Option<PathBuf>,
    /// Ratings on a calibration set used to admit evaluators.
    #[serde(default)]
    pub calibration_ratings: Option<PathBuf>,
    #[serde(default = "default_raters")]
    pub raters_per_item: usize,
    #[serde(default = "default_threshold")]
    pub kappa_threshold: f64,
    /// Defaults to on only when a backend is nondeterministic.
    #[serde(default)]
    pub record_timings: Option<bool>,
    #[serde(default)]
    pub run_name: Option<String>,
    #[serde(default)]
    pub ui_dir: Option<PathBuf>,
    #[serde(default)]
    pub bind: Option<String>,
    #[serde(default)]
    pub templates: TemplatePaths,
    pub backends: BackendsConfig,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::load_with_env(path, |key| std::env::var(key).ok())
    }

    pub fn load_with_env(
        path: impl AsRef<Path>,
        env: impl Fn(&str) -> Option<String>,
    ) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let mut config = Self::parse(&text, base)?;
        config.apply_env(env);
        Ok(config)
    }

    /// Parses a config whose relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, ConfigError> {
        let mut config: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))?;
        config.base_dir = base_dir.into();
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.parallelism == 0 {
            return Err(ConfigError("parallelism must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.kappa_threshold) {
            return Err(ConfigError(format!(
                "kappa_threshold must be in [0, 1], got {}",
                self.kappa_threshold
            )));
        }
        if self.raters_per_item == 0 {
            return Err(ConfigError("raters_per_item must be at least 1".into()));
        }
        let dataset = self.resolve(&self.dataset);
        if !dataset.is_file() {
            return Err(ConfigError(format!(
                "dataset {} does not exist",
                dataset.display()
            )));
        }
        for backend in [&self.backends.context, &self.backends.completion] {
            if let BackendConfig::Mock { script, .. } = backend {
                let p = self.resolve(script);
                if !p.is_file() {
                    return Err(ConfigError(format!(
                        "mock script {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        for p in [
            &self.templates.cot,
            &self.templates.general,
            &self.templates.general_without_context,
            &self.templates.no_cot,
        ]
        .into_iter()
        .flatten()
        {
            let p = self.resolve(p);
            if !p.is_file() {
                return Err(ConfigError(format!(
                    "template {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    fn apply_env(&mut self, env: impl Fn(&str) -> Option<String>) {
        for (backend, role) in [
            (&mut self.backends.context, "CONTEXT"),
            (&mut self.backends.completion, "COMPLETION"),
        ] {
            match backend {
                BackendConfig::Http {
                    base_url,
                    bearer_token,
                    bearer_token_env,
                    ..
                } => {
                    if let Some(url) = env(&format!("VQA_TSP_{role}_URL")) {
                        *base_url = url;
                    }
                    *bearer_token = env(&format!("VQA_TSP_{role}_TOKEN"))
                        .or_else(|| bearer_token_env.as_deref().and_then(&env));
                }
                BackendConfig::Mock { .. } => {
                    if env(&format!("VQA_TSP_{role}_URL")).is_some() {
                        tracing::warn!(role, "ignoring URL override for a mock backend");
                    }
                }
            }
        }
    }

    /// Resolves a config-relative path.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.resolve(&self.dataset)
    }

    pub fn results_path(&self) -> Option<PathBuf> {
        self.results.as_deref().map(|p| self.resolve(p))
    }

    pub fn ratings_path(&self) -> Option<PathBuf> {
        self.ratings.as_deref().map(|p| self.resolve(p))
    }

    pub fn calibration_path(&self) -> Option<PathBuf> {
        self.calibration_ratings.as_deref().map(|p| self.resolve(p))
    }

    pub fn ui_dir(&self) -> Option<PathBuf> {
        self.ui_dir.as_deref().map(|p| self.resolve(p))
    }

    pub fn build_backends(&self) -> Result<Backends, ConfigError> {
        Ok(Backends {
            context: self.backends.context.build(&self.base_dir)?.into(),
            completion: self.backends.completion.build(&self.base_dir)?.into(),
        })
    }

    pub fn prompts(&self) -> Result<PromptSet, ConfigError> {
        PromptSet::load(&self.templates, &self.base_dir).map_err(|e| ConfigError(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_fixture(dir: &Path) {
        std::fs::write(dir.join("dataset.json"), r#"{"samples": []}"#).unwrap();
        std::fs::write(dir.join("script.json"), r#"{"default": "ok"}"#).unwrap();
    }

    const MINIMAL: &str = r#"
        dataset = "dataset.json"
        mode = "zfdda-cot"
        [backends.context]
        kind = "mock"
        script = "script.json"
        [backends.completion]
        kind = "http"
        name = "flan"
        base_url = "http://localhost:9/generate"
        bearer_token_env = "MY_TOKEN"
    "#;

    #[test]
    fn parses_with_defaults_and_env() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let path = dir.path().join("run.toml");
        std::fs::write(&path, MINIMAL).unwrap();
        let config = RunConfig::load_with_env(&path, |k| match k {
            "VQA_TSP_COMPLETION_URL" => Some("http://models:8000/v1".into()),
            "MY_TOKEN" => Some("tok".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(config.mode, Some(PipelineMode::ZeroShotCoT));
        assert_eq!(config.parallelism, 1);
        assert_eq!(config.raters_per_item, 3);
        assert_eq!(config.kappa_threshold, 0.60);
        assert_eq!(config.record_timings, None);
        match &config.backends.completion {
            BackendConfig::Http {
                base_url,
                bearer_token,
                ..
            } => {
                assert_eq!(base_url, "http://models:8000/v1");
                assert_eq!(bearer_token.as_deref(), Some("tok"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let backends = config.build_backends().unwrap();
        assert_eq!(backends.completion.name(), "flan");
        assert_eq!(backends.context.name(), "mock");
    }

    #[test]
    fn rejects_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path());
        let with = |extra: &str| RunConfig::parse(&format!("{extra}\n{MINIMAL}"), dir.path());
        assert!(with("parallelism = 0").is_err());
        assert!(with("kappa_threshold = 1.5").is_err());
        assert!(with("unknown_key = 1").is_err());
        assert!(
            RunConfig::parse(&MINIMAL.replace("dataset.json", "missing.json"), dir.path()).is_err()
        );
        assert!(
            RunConfig::parse(&MINIMAL.replace("script.json", "missing.json"), dir.path()).is_err()
        );
        assert!(with("parallelism = 8").is_ok());
    }
}
