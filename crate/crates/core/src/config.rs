//! Run configuration, read from a TOML file.
//!
//! ```toml
//! seed = 42
//! parallelism = 4
//! indicator_library = "appendix-full"   # or a path to a JSON library
//!
//! [provider]
//! kind = "http"                         # or "mock"
//! base_url = "https://api.openai.com/v1"
//! api_key_env = "OPENAI_API_KEY"
//! vlm_model = "gpt-4o"
//! llm_model = "gpt-4o"
//! requests_per_minute = 60
//!
//! [cost]
//! input_price_per_token = "0.0000025"
//! output_price_per_token = "0.00001"
//! ```
//!
//! Relative paths are resolved against the config file's directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::direct::DirectOptions;
use crate::pipeline::guided::GuidedOptions;
use crate::pipeline::indicators::IndicatorLibrary;
use crate::pipeline::Decoding;
use crate::provider::{CostModel, HttpConfig, HttpProvider, MockProvider, Provider, RetryClass, RetryPolicy, Retrying, WireFormat};
use crate::simulate::{scene_provider, Scene};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("API key variable {0} is not set")]
    MissingApiKey(String),
    #[error("referenced file does not exist: {0}")]
    MissingFile(PathBuf),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Http,
    #[default]
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub base_url: String,
    pub api_key_env: String,
    pub vlm_model: String,
    pub llm_model: String,
    pub requests_per_minute: Option<u32>,
    pub timeout_secs: u64,
    pub wire_format: WireFormat,
    /// Mock only: scene file describing what each image shows.
    pub scene: Option<PathBuf>,
    /// Mock only: reply for requests the scene does not cover.
    pub default_reply: Option<String>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Mock,
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            vlm_model: "gpt-4o".into(),
            llm_model: "gpt-4o".into(),
            requests_per_minute: None,
            timeout_secs: 60,
            wire_format: WireFormat::default(),
            scene: None,
            default_reply: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodingConfig {
    pub direct: Decoding,
    pub extraction: Decoding,
    pub adjudication: Decoding,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        DecodingConfig {
            direct: Decoding::DIRECT,
            extraction: Decoding::INDICATORS,
            adjudication: Decoding::ADJUDICATION,
        }
    }
}

/// Average tokens per 10 samples for one pipeline at one image count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenProfile {
    pub pipeline: crate::runlog::PipelineKind,
    pub images: u8,
    pub vlm_input: u64,
    pub vlm_output: u64,
    #[serde(default)]
    pub llm_input: u64,
    #[serde(default)]
    pub llm_output: u64,
}

impl TokenProfile {
    pub const PER_SAMPLES: u64 = 10;

    /// Published per-10-sample averages.
    pub fn defaults() -> Vec<TokenProfile> {
        use crate::runlog::PipelineKind::{A, B};
        let p = |pipeline, images, vlm_input, vlm_output, llm_input, llm_output| TokenProfile {
            pipeline,
            images,
            vlm_input,
            vlm_output,
            llm_input,
            llm_output,
        };
        vec![
            p(A, 1, 5_240, 18, 0, 0),
            p(A, 2, 9_320, 14, 0, 0),
            p(A, 3, 15_440, 15, 0, 0),
            p(B, 1, 5_690, 608, 1_904, 18),
            p(B, 2, 9_770, 660, 1_930, 11),
            p(B, 3, 15_890, 660, 1_930, 12),
        ]
    }

    pub fn usage(&self) -> crate::provider::TokenUsage {
        crate::provider::TokenUsage::new(self.vlm_input + self.llm_input, self.vlm_output + self.llm_output)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub parallelism: usize,
    pub indicator_library: String,
    /// Attach images to the adjudication call as well.
    pub stage2_images: bool,
    pub provider: ProviderConfig,
    pub decoding: DecodingConfig,
    pub retry: RetryPolicy,
    pub cost: CostModel,
    pub token_profiles: Vec<TokenProfile>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            parallelism: 4,
            indicator_library: IndicatorLibrary::DEFAULT_PRESET.into(),
            stage2_images: false,
            provider: ProviderConfig::default(),
            decoding: DecodingConfig::default(),
            retry: RetryPolicy::default(),
            cost: CostModel::default(),
            token_profiles: TokenProfile::defaults(),
            base_dir: None,
        }
    }
}

fn check_decoding(name: &str, d: &Decoding) -> Result<(), ConfigError> {
    if !(0.0..=2.0).contains(&d.temperature) || d.max_tokens == 0 {
        return Err(ConfigError::Invalid(format!(
            "decoding.{name}: temperature must be in [0, 2] and max_tokens positive"
        )));
    }
    Ok(())
}

impl RunConfig {
    /// Parses and validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), reason: e.to_string() })?;
        let mut config = Self::from_toml(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf);
        config.validate()?;
        Ok(config)
    }

    /// Parses without validating; relative paths stay relative to the
    /// working directory.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn library_spec(&self) -> String {
        match IndicatorLibrary::preset(&self.indicator_library) {
            Ok(_) => self.indicator_library.clone(),
            Err(_) => self.resolve_path(Path::new(&self.indicator_library)).display().to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.parallelism == 0 {
            return Err(ConfigError::Invalid("parallelism must be at least 1".into()));
        }
        self.retry.validate().map_err(ConfigError::Invalid)?;
        if !self.cost.is_valid() {
            return Err(ConfigError::Invalid("prices must be non-negative".into()));
        }
        check_decoding("direct", &self.decoding.direct)?;
        check_decoding("extraction", &self.decoding.extraction)?;
        check_decoding("adjudication", &self.decoding.adjudication)?;
        if IndicatorLibrary::preset(&self.indicator_library).is_err() {
            let p = self.resolve_path(Path::new(&self.indicator_library));
            if !p.exists() {
                return Err(ConfigError::MissingFile(p));
            }
        }
        self.indicator_library()?;
        if let Some(scene) = &self.provider.scene {
            let p = self.resolve_path(scene);
            if !p.is_file() {
                return Err(ConfigError::MissingFile(p));
            }
        }
        if self.provider.kind == ProviderKind::Http {
            if self.provider.base_url.trim().is_empty() {
                return Err(ConfigError::Invalid("provider.base_url is empty".into()));
            }
            self.api_key()?;
        }
        Ok(())
    }

    pub fn api_key(&self) -> Result<String, ConfigError> {
        let var = &self.provider.api_key_env;
        std::env::var(var)
            .ok()
            .filter(|v| !v.trim().is_empty())
            .ok_or_else(|| ConfigError::MissingApiKey(var.clone()))
    }

    pub fn indicator_library(&self) -> Result<IndicatorLibrary, ConfigError> {
        IndicatorLibrary::resolve(&self.library_spec()).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    fn unparseable_retries(&self) -> u32 {
        u32::from(self.retry.retries(RetryClass::UnparseableOutput))
    }

    pub fn direct_options(&self) -> DirectOptions {
        DirectOptions {
            decoding: self.decoding.direct,
            unparseable_retries: self.unparseable_retries(),
            ..DirectOptions::new(self.provider.vlm_model.clone())
        }
    }

    pub fn guided_options(&self) -> GuidedOptions {
        GuidedOptions {
            extraction: self.decoding.extraction,
            adjudication: self.decoding.adjudication,
            unparseable_retries: self.unparseable_retries(),
            stage2_images: self.stage2_images,
            ..GuidedOptions::new(self.provider.vlm_model.clone(), self.provider.llm_model.clone())
        }
    }

    pub fn token_profile(&self, pipeline: crate::runlog::PipelineKind, images: u8) -> Option<TokenProfile> {
        self.token_profiles.iter().copied().find(|p| p.pipeline == pipeline && p.images == images)
    }

    /// Builds the configured provider; HTTP providers get the retry wrapper.
    pub fn build_provider(&self) -> Result<Arc<dyn Provider>, ConfigError> {
        match self.provider.kind {
            ProviderKind::Http => {
                let http = HttpProvider::new(HttpConfig {
                    base_url: self.provider.base_url.clone(),
                    api_key: self.api_key()?,
                    timeout: Duration::from_secs(self.provider.timeout_secs),
                    requests_per_minute: self.provider.requests_per_minute,
                    wire_format: self.provider.wire_format,
                })
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok(Arc::new(Retrying::new(http, self.retry.clone())))
            }
            ProviderKind::Mock => {
                let mut mock = match &self.provider.scene {
                    Some(p) => {
                        let scene = Scene::load(&self.resolve_path(p)).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                        scene_provider(&scene).map_err(|e| ConfigError::Invalid(e.to_string()))?
                    }
                    None => MockProvider::new(),
                };
                if let Some(reply) = &self.provider.default_reply {
                    mock = mock.with_default(reply.clone());
                }
                Ok(Arc::new(mock))
            }
        }
    }
}
