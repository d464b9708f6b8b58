//! TOML pipeline configuration. Every section is optional; unknown keys are
//! rejected at load.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aseg::{AsegConfig, MfccConfig};
use crate::capgen::client::{ClientSet, RetryPolicy, Role};
use crate::capgen::CaptionConfig;
use crate::dialoggen::DialogueConfig;
use crate::filtergate::FilterConfig;
use crate::vseg::VsegConfig;

pub const CONFIG_ENV: &str = "OMNIVALE_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MediaConfig {
    /// Rate at which extracted frames were sampled.
    pub frame_fps: f64,
    /// Audio is resampled to this rate before analysis.
    pub sample_rate: u32,
}

impl Default for MediaConfig {
    fn default() -> Self {
        Self { frame_fps: 2.0, sample_rate: 16_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientMode {
    #[default]
    Stub,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClientsConfig {
    pub mode: ClientMode,
    /// Per-role endpoint URLs for live mode.
    pub endpoints: BTreeMap<Role, String>,
    pub timeout_s: f64,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub retry: RetryPolicy,
}

impl Default for ClientsConfig {
    fn default() -> Self {
        Self {
            mode: ClientMode::Stub,
            endpoints: BTreeMap::new(),
            timeout_s: 60.0,
            api_key_env: None,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    /// Directory of per-video asset directories.
    pub assets_root: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub test_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { test_fraction: 0.14 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReviewConfig {
    pub bind: String,
    /// Shared bearer token; requests are unauthenticated when absent.
    pub token: Option<String>,
    pub page_size: usize,
    /// Directory for the audit log and snapshots.
    pub data_dir: Option<PathBuf>,
    pub allowed_origin: Option<String>,
    /// Accepted mutations between snapshots.
    pub snapshot_every: usize,
}

impl Default for ReviewConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8787".into(),
            token: None,
            page_size: 50,
            data_dir: None,
            allowed_origin: None,
            snapshot_every: 100,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads across videos; 0 uses every core.
    pub parallelism: usize,
    pub io: IoConfig,
    pub media: MediaConfig,
    pub filter: FilterConfig,
    pub vseg: VsegConfig,
    pub mfcc: MfccConfig,
    pub aseg: AsegConfig,
    pub caption: CaptionConfig,
    pub dialogue: DialogueConfig,
    pub clients: ClientsConfig,
    pub split: SplitConfig,
    pub review: ReviewConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            detail: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text, path)
    }

    /// Explicit path, else `OMNIVALE_CONFIG`, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.filter.validate().map_err(|e| inv(&e))?;
        self.vseg.validate().map_err(|e| inv(&e))?;
        self.mfcc.validate().map_err(|e| inv(&e))?;
        self.aseg.validate().map_err(|e| inv(&e))?;
        if !(self.media.frame_fps > 0.0 && self.media.frame_fps.is_finite()) {
            return Err(ConfigError::Invalid(format!("media.frame_fps must be positive, got {}", self.media.frame_fps)));
        }
        if self.media.sample_rate == 0 {
            return Err(ConfigError::Invalid("media.sample_rate must be positive".into()));
        }
        if !(self.caption.max_chunk_s > 0.0) {
            return Err(ConfigError::Invalid(format!("caption.max_chunk_s must be positive, got {}", self.caption.max_chunk_s)));
        }
        if !(0.0..=1.0).contains(&self.dialogue.single_turn_fraction) || !(0.0..=1.0).contains(&self.dialogue.tvg_probability) {
            return Err(ConfigError::Invalid("dialogue fractions must lie in [0, 1]".into()));
        }
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return Err(ConfigError::Invalid(format!("split.test_fraction must lie in (0, 1), got {}", self.split.test_fraction)));
        }
        if self.clients.retry.max_attempts == 0 {
            return Err(ConfigError::Invalid("clients.retry.max_attempts must be at least 1".into()));
        }
        if !(self.clients.timeout_s > 0.0) {
            return Err(ConfigError::Invalid("clients.timeout_s must be positive".into()));
        }
        if self.clients.mode == ClientMode::Live && self.clients.endpoints.is_empty() {
            return Err(ConfigError::Invalid("clients.mode = \"live\" needs at least one endpoint".into()));
        }
        if self.review.page_size == 0 {
            return Err(ConfigError::Invalid("review.page_size must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, excluding `parallelism` and the
    /// `io` and `review` sections, which do not affect pipeline outputs.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("parallelism");
            obj.remove("io");
            obj.remove("review");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    pub fn clients(&self) -> ClientSet {
        let mut set = match self.clients.mode {
            ClientMode::Stub => ClientSet::stub(self.seed),
            ClientMode::Live => {
                let key = self.clients.api_key_env.as_deref().and_then(|k| std::env::var(k).ok());
                ClientSet::live(&self.clients.endpoints, Duration::from_secs_f64(self.clients.timeout_s), key, self.seed)
            }
        };
        set.retry = self.clients.retry;
        set
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
