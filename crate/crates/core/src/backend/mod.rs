//! Contracts for the two black-box models and the client layer around them.
//!
//! A [`TextGenBackend`] writes prompts (the generator role) and a
//! [`VisionClassifyBackend`] answers an image plus prompt with free text
//! (the classifier role). [`TextClient`] and [`VisionClient`] add request
//! validation, content-addressed caching and bounded retries on top.

mod cache;
mod http;

use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CacheKey, CachedResponse, ResponseCache};
pub use http::{HttpBackendConfig, HttpChatBackend};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    /// Worth retrying: connection resets, timeouts, throttling, 5xx.
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("backend unavailable after {attempts} attempts: {last}")]
    Unavailable { attempts: u32, last: String },
    #[error("backend protocol error: {0}")]
    Protocol(String),
    #[error("backend rejected input: {0}")]
    Input(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BackendIdentity {
    pub backend_id: String,
    pub model_id: String,
}

impl BackendIdentity {
    pub fn new(backend_id: impl Into<String>, model_id: impl Into<String>) -> Self {
        BackendIdentity {
            backend_id: backend_id.into(),
            model_id: model_id.into(),
        }
    }
}

impl fmt::Display for BackendIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.backend_id, self.model_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl DecodeParams {
    /// Classification calls decode greedily.
    pub fn evaluation() -> Self {
        DecodeParams {
            temperature: 0.0,
            max_tokens: 256,
            seed: None,
        }
    }

    pub fn generation() -> Self {
        DecodeParams {
            temperature: 1.0,
            max_tokens: 1024,
            seed: None,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        DecodeParams {
            seed: Some(seed),
            ..self.clone()
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::config(format!("{path}.temperature"), "must be a finite value >= 0"));
        }
        if self.max_tokens == 0 {
            return Err(Error::config(format!("{path}.max_tokens"), "must be positive"));
        }
        Ok(())
    }
}

/// Reference to an image: a local path, an `http(s)://` or `data:` URL, or a
/// `sim://` id understood by the simulated classifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageRef(pub String);

impl ImageRef {
    pub fn new(s: impl Into<String>) -> Self {
        ImageRef(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_remote(&self) -> bool {
        ["http://", "https://", "data:", "sim://"]
            .iter()
            .any(|p| self.0.starts_with(p))
    }

    pub fn is_resolvable(&self) -> bool {
        !self.0.is_empty() && (self.is_remote() || Path::new(&self.0).is_file())
    }
}

impl fmt::Display for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Generator role.
pub trait TextGenBackend: Send + Sync {
    fn identity(&self) -> BackendIdentity;
    fn generate(&self, instruction: &str, decode: &DecodeParams) -> Result<String, BackendError>;
}

/// Classifier role.
pub trait VisionClassifyBackend: Send + Sync {
    fn identity(&self) -> BackendIdentity;
    fn classify(
        &self,
        image: &ImageRef,
        prompt: &str,
        decode: &DecodeParams,
    ) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryNotice {
    pub backend: String,
    pub attempt: u32,
    pub error: String,
}

/// Receives retry notifications; the run journal implements this.
pub trait BackendObserver: Send + Sync {
    fn on_retry(&self, notice: &RetryNotice);
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Total attempts, including the first one.
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        RetryPolicy {
            max_attempts,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    fn delay(&self, failed_attempt: u32) -> Duration {
        let factor = 1u32 << (failed_attempt.saturating_sub(1)).min(16);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    fn run<T>(
        &self,
        who: &BackendIdentity,
        observer: Option<&dyn BackendObserver>,
        mut call: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let max = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match call() {
                Err(BackendError::Transient(msg)) => {
                    if attempt >= max {
                        return Err(BackendError::Unavailable {
                            attempts: attempt,
                            last: msg,
                        });
                    }
                    if let Some(obs) = observer {
                        obs.on_retry(&RetryNotice {
                            backend: who.to_string(),
                            attempt,
                            error: msg,
                        });
                    }
                    std::thread::sleep(self.delay(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Counters for one client. `hits + misses` equals the number of logical
/// calls; `attempts` includes retries.
#[derive(Debug, Default)]
pub struct CallStats {
    hits: AtomicU64,
    misses: AtomicU64,
    attempts: AtomicU64,
}

impl CallStats {
    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    /// Logical calls that reached the backend.
    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::Relaxed)
    }
}

pub struct TextClient {
    backend: Arc<dyn TextGenBackend>,
    cache: Option<Arc<ResponseCache>>,
    retry: RetryPolicy,
    stats: CallStats,
}

impl TextClient {
    pub fn new(backend: Arc<dyn TextGenBackend>) -> Self {
        TextClient {
            backend,
            cache: None,
            retry: RetryPolicy::default(),
            stats: CallStats::default(),
        }
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn identity(&self) -> BackendIdentity {
        self.backend.identity()
    }

    pub fn stats(&self) -> &CallStats {
        &self.stats
    }

    pub fn generate_text(
        &self,
        instruction: &str,
        decode: &DecodeParams,
        observer: Option<&dyn BackendObserver>,
    ) -> Result<String> {
        if instruction.trim().is_empty() {
            return Err(Error::Precondition("instruction must not be empty".into()));
        }
        let who = self.backend.identity();
        let key = CacheKey::new(&who, "generate", instruction, None, decode);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            self.stats.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit);
        }
        self.stats.misses.fetch_add(1, Ordering::Relaxed);
        let out = self.retry.run(&who, observer, || {
            self.stats.attempts.fetch_add(1, Ordering::Relaxed);
            self.backend.generate(instruction, decode)
        })?;
        if let Some(cache) = &self.cache {
            cache.put(&key, &who, &out)?;
        }
        Ok(out)
    }
}

pub struct VisionClient {
    backend: Arc<dyn VisionClassifyBackend>,
    cache: Option<Arc<ResponseCache>>,
    retry: RetryPolicy,
    stats: CallStats,
}

impl VisionClient {
    pub fn new(backend: Arc<dyn VisionClassifyBackend>) -> Self {
        VisionClient {
            backend,
            cache: None,
            retry: RetryPolicy::default(),
            stats: CallStats::default(),
        }
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn identity(&self) -> BackendIdentity {
        self.backend.identity()
    }

    pub fn stats(&self) -> &CallStats {
        &self.stats
    }

    /// Raw classifier reply for `image` under `prompt`; feed it to
    /// [`crate::emotion::parse_label`].
    pub fn classify_image(
        &self,
        image: &ImageRef,
        prompt: &str,
        decode: &DecodeParams,
        observer: Option<&dyn BackendObserver>,
    ) -> Result<String> {
        if prompt.trim().is_empty() {
            return Err(Error::Precondition("prompt must not be empty".into()));
        }
        if !image.is_resolvable() {
            return Err(Error::Input(format!("cannot resolve image {image}")));
        }
        let who = self.backend.identity();
        let key = CacheKey::new(&who, "classify", prompt, Some(image), decode);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            self.stats.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit);
        }
        self.stats.misses.fetch_add(1, Ordering::Relaxed);
        let out = self.retry.run(&who, observer, || {
            self.stats.attempts.fetch_add(1, Ordering::Relaxed);
            self.backend.classify(image, prompt, decode)
        })?;
        if let Some(cache) = &self.cache {
            cache.put(&key, &who, &out)?;
        }
        Ok(out)
    }
}

/// Case-folds, trims and collapses internal whitespace.
pub fn normalize_prompt(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Extracts every line that starts with `-` (after optional indentation),
/// trimmed, in order, dropping normalized duplicates and empty entries.
pub fn parse_prompt_list(raw: &str) -> Result<Vec<String>> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for line in raw.lines() {
        let Some(rest) = line.trim_start().strip_prefix('-') else {
            continue;
        };
        let text = rest.trim();
        if text.is_empty() {
            continue;
        }
        if seen.insert(normalize_prompt(text)) {
            out.push(text.to_string());
        }
    }
    if out.is_empty() {
        return Err(Error::Extraction);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    #[test]
    fn prompt_list_examples() {
        assert_eq!(parse_prompt_list("- A\n- B\nnote").unwrap(), vec!["A", "B"]);
        assert_eq!(parse_prompt_list("- A\n-  a ").unwrap(), vec!["A"]);
        assert!(matches!(parse_prompt_list("no dashes at all"), Err(Error::Extraction)));
        assert!(matches!(parse_prompt_list("-\n-   \n"), Err(Error::Extraction)));
        assert_eq!(
            parse_prompt_list("  - indented one\n\tnot - this\n- Two  words").unwrap(),
            vec!["indented one", "Two  words"]
        );
    }

    proptest::proptest! {
        #[test]
        fn prompt_list_has_no_duplicates_or_empties(raw in "([ \\-]{0,2}[a-cA-C ]{0,6}\n){0,12}") {
            if let Ok(list) = parse_prompt_list(&raw) {
                let mut norm: Vec<_> = list.iter().map(|p| normalize_prompt(p)).collect();
                proptest::prop_assert!(list.iter().all(|p| !p.trim().is_empty()));
                let before = norm.len();
                norm.sort();
                norm.dedup();
                proptest::prop_assert_eq!(before, norm.len());
            }
        }
    }

    /// Fails with a transient error a fixed number of times, then succeeds.
    struct Flaky {
        failures_left: Mutex<u32>,
        calls: AtomicU64,
    }

    impl Flaky {
        fn new(failures: u32) -> Self {
            Flaky {
                failures_left: Mutex::new(failures),
                calls: AtomicU64::new(0),
            }
        }
    }

    impl TextGenBackend for Flaky {
        fn identity(&self) -> BackendIdentity {
            BackendIdentity::new("flaky", "m1")
        }
        fn generate(&self, instruction: &str, _: &DecodeParams) -> Result<String, BackendError> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            let mut left = self.failures_left.lock().unwrap();
            if *left > 0 {
                *left -= 1;
                return Err(BackendError::Transient("connection reset".into()));
            }
            Ok(format!("echo: {instruction}"))
        }
    }

    impl VisionClassifyBackend for Flaky {
        fn identity(&self) -> BackendIdentity {
            BackendIdentity::new("flaky", "v1")
        }
        fn classify(&self, image: &ImageRef, prompt: &str, _: &DecodeParams) -> Result<String, BackendError> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            Ok(format!("{image}: {prompt}"))
        }
    }

    #[derive(Default)]
    struct Recorder(Mutex<Vec<RetryNotice>>);

    impl BackendObserver for Recorder {
        fn on_retry(&self, notice: &RetryNotice) {
            self.0.lock().unwrap().push(notice.clone());
        }
    }

    #[test]
    fn retries_then_succeeds() {
        let backend = Arc::new(Flaky::new(2));
        let client = TextClient::new(backend.clone()).with_retry(RetryPolicy::immediate(3));
        let rec = Recorder::default();
        let out = client
            .generate_text("hello", &DecodeParams::generation(), Some(&rec))
            .unwrap();
        assert_eq!(out, "echo: hello");
        assert_eq!(rec.0.lock().unwrap().len(), 2);
        assert_eq!(client.stats().attempts(), 3);
        assert_eq!(client.stats().misses(), 1);
    }

    #[test]
    fn exhausted_retries_report_unavailable() {
        let client = TextClient::new(Arc::new(Flaky::new(5))).with_retry(RetryPolicy::immediate(3));
        let err = client
            .generate_text("hello", &DecodeParams::generation(), None)
            .unwrap_err();
        assert!(matches!(
            err,
            Error::Backend(BackendError::Unavailable { attempts: 3, .. })
        ));
    }

    #[test]
    fn empty_requests_violate_preconditions() {
        let flaky = Arc::new(Flaky::new(0));
        let text = TextClient::new(flaky.clone());
        assert!(matches!(
            text.generate_text("  ", &DecodeParams::generation(), None),
            Err(Error::Precondition(_))
        ));
        let vision = VisionClient::new(flaky.clone());
        let img = ImageRef::new("sim://u1/s1");
        assert!(matches!(
            vision.classify_image(&img, "", &DecodeParams::evaluation(), None),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            vision.classify_image(&ImageRef::new("/no/such/file.jpg"), "p", &DecodeParams::evaluation(), None),
            Err(Error::Input(_))
        ));
        assert_eq!(flaky.calls.load(Ordering::Relaxed), 0);
    }

    #[test]
    fn cached_classification_skips_backend() {
        let flaky = Arc::new(Flaky::new(0));
        let vision = VisionClient::new(flaky.clone()).with_cache(Arc::new(ResponseCache::in_memory()));
        let img = ImageRef::new("sim://u1/s1");
        let d = DecodeParams::evaluation();
        let a = vision.classify_image(&img, "which emotion?", &d, None).unwrap();
        let b = vision.classify_image(&img, "which emotion?", &d, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(flaky.calls.load(Ordering::Relaxed), 1);
        assert_eq!(vision.stats().hits(), 1);
        assert_eq!(vision.stats().hits() + vision.stats().misses(), 2);
    }

    #[test]
    fn backoff_grows_and_caps() {
        let p = RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(350),
        };
        assert_eq!(p.delay(1), Duration::from_millis(100));
        assert_eq!(p.delay(2), Duration::from_millis(200));
        assert_eq!(p.delay(3), Duration::from_millis(350));
    }
}
