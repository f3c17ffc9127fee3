//! Run configuration: one TOML file, optionally overridden by `key=value`
//! flags, validated before any backend is touched.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backend::{HttpBackendConfig, HttpChatBackend, ResponseCache, RetryPolicy, TextClient, VisionClient};
use crate::datastore::journal::Clock;
use crate::datastore::{LabeledSample, SplitSpec};
use crate::emotion::{EmotionLabel, EmotionWheel, Polarity, DEFAULT_POLARITY_CONSTANT};
use crate::error::{Error, Result};
use crate::simkit::{MockLlm, MockMllm, SimulationSpec};
use crate::tuner::TuningConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    #[default]
    Simulate,
    Http(HttpBackendConfig),
}

fn default_order() -> Vec<EmotionLabel> {
    EmotionWheel::DEFAULT_ORDER.to_vec()
}
fn default_polarity_constant() -> u32 {
    DEFAULT_POLARITY_CONSTANT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WheelConfig {
    #[serde(default = "default_order")]
    pub order: Vec<EmotionLabel>,
    #[serde(default = "default_polarity_constant")]
    pub polarity_constant: u32,
    /// Labels on the positive side; the rest are negative. Defaults to
    /// amusement, awe, contentment and excitement.
    #[serde(default)]
    pub positive: Option<Vec<EmotionLabel>>,
}

impl Default for WheelConfig {
    fn default() -> Self {
        WheelConfig {
            order: default_order(),
            polarity_constant: default_polarity_constant(),
            positive: None,
        }
    }
}

impl WheelConfig {
    pub fn build(&self) -> Result<EmotionWheel> {
        let polarity: Vec<(EmotionLabel, Polarity)> = EmotionLabel::ALL
            .iter()
            .map(|&l| {
                let p = match &self.positive {
                    Some(pos) if pos.contains(&l) => Polarity::Positive,
                    Some(_) => Polarity::Negative,
                    None => l.canonical_polarity(),
                };
                (l, p)
            })
            .collect();
        EmotionWheel::new(self.order.clone(), &polarity, self.polarity_constant)
    }
}

fn default_attempts() -> u32 {
    3
}
fn default_base_delay() -> u64 {
    500
}
fn default_max_delay() -> u64 {
    8000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryConfig {
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_base_delay")]
    pub base_delay_ms: u64,
    #[serde(default = "default_max_delay")]
    pub max_delay_ms: u64,
}

impl Default for RetryConfig {
    fn default() -> Self {
        RetryConfig {
            max_attempts: default_attempts(),
            base_delay_ms: default_base_delay(),
            max_delay_ms: default_max_delay(),
        }
    }
}

impl RetryConfig {
    pub fn policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.max_attempts,
            base_delay: Duration::from_millis(self.base_delay_ms),
            max_delay: Duration::from_millis(self.max_delay_ms),
        }
    }
}

fn default_work_dir() -> PathBuf {
    PathBuf::from("runs")
}
fn default_clock() -> Clock {
    Clock::System
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    #[serde(default = "default_work_dir")]
    pub work_dir: PathBuf,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_clock")]
    pub clock: Clock,
    #[serde(default)]
    pub tuning: TuningConfig,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub wheel: WheelConfig,
    #[serde(default)]
    pub llm: BackendConfig,
    #[serde(default)]
    pub mllm: BackendConfig,
    #[serde(default)]
    pub retry: RetryConfig,
    #[serde(default)]
    pub simulation: SimulationSpec,
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn override_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key v was just parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override {assignment:?} is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Usage(format!("override key {key:?} is malformed")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key.trim(), format!("`{part}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), override_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Parses `text`, applies overrides, validates, and resolves relative
    /// paths against `base_dir`.
    pub fn from_toml(text: &str, overrides: &[String], base_dir: &Path) -> Result<Self> {
        let mut root: toml::Table =
            toml::from_str(text).map_err(|e| Error::config("<file>", e.message().to_string()))?;
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let mut config: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(root)).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "<root>".to_string() } else { path }, e.into_inner().to_string())
        })?;
        for p in [&mut config.manifest, &mut config.work_dir] {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        if let Some(c) = config.cache_dir.as_mut().filter(|c| c.is_relative()) {
            *c = base_dir.join(&*c);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, overrides, base)
    }

    pub fn validate(&self) -> Result<()> {
        self.tuning.validate()?;
        self.split.validate()?;
        self.wheel.build()?;
        if self.retry.max_attempts == 0 {
            return Err(Error::config("retry.max_attempts", "must be at least 1"));
        }
        for (name, b) in [("llm", &self.llm), ("mllm", &self.mllm)] {
            if let BackendConfig::Http(h) = b {
                if h.base_url.is_empty() {
                    return Err(Error::config(format!("{name}.base_url"), "must not be empty"));
                }
                if h.model.is_empty() {
                    return Err(Error::config(format!("{name}.model"), "must not be empty"));
                }
            }
        }
        if !(0.0..0.5).contains(&self.simulation.noise) {
            return Err(Error::config("simulation.noise", "must lie in [0, 0.5)"));
        }
        Ok(())
    }

    /// Sets every seed in the file to `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.tuning.seed = seed;
        self.split.seed = seed;
        self.simulation.seed = seed;
    }

    pub fn journal_dir(&self) -> PathBuf {
        self.work_dir.join("journals")
    }

    pub fn user_dir(&self, user_id: &str) -> PathBuf {
        self.work_dir.join(user_id)
    }

    pub fn cache(&self) -> Result<Arc<ResponseCache>> {
        Ok(Arc::new(match &self.cache_dir {
            Some(dir) => ResponseCache::on_disk(dir)?,
            None => ResponseCache::in_memory(),
        }))
    }

    pub fn text_client(&self, cache: Arc<ResponseCache>) -> TextClient {
        let client = match &self.llm {
            BackendConfig::Simulate => TextClient::new(Arc::new(MockLlm::new(
                self.simulation.seed,
                self.tuning.labels.clone(),
            ))),
            BackendConfig::Http(h) => TextClient::new(Arc::new(HttpChatBackend::new(h.clone()))),
        };
        client.with_cache(cache).with_retry(self.retry.policy())
    }

    /// `samples` is the full manifest; the simulated classifier needs the
    /// ground truth of every image it may be shown.
    pub fn vision_client(&self, cache: Arc<ResponseCache>, samples: &[LabeledSample]) -> Result<VisionClient> {
        let client = match &self.mllm {
            BackendConfig::Simulate => VisionClient::new(Arc::new(MockMllm::for_manifest(
                &self.simulation,
                samples,
                self.tuning.labels.clone(),
            )?)),
            BackendConfig::Http(h) => VisionClient::new(Arc::new(HttpChatBackend::new(h.clone()))),
        };
        Ok(client.with_cache(cache).with_retry(self.retry.policy()))
    }

    /// The parts of the configuration that determine results, recorded at
    /// the start of every journal.
    pub fn fingerprint(&self, llm: &TextClient, mllm: &VisionClient) -> serde_json::Value {
        serde_json::json!({
            "tuning": self.tuning,
            "split": self.split,
            "llm": llm.identity().to_string(),
            "mllm": mllm.identity().to_string(),
        })
    }
}
