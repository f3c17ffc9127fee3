//! Chat-style HTTP+JSON backend.
//!
//! Request: `POST {base_url}/chat/completions` with
//! `{"model", "messages": [{"role": "user", "content": [...]}], "temperature", "max_tokens", "seed"?}`
//! where `content` holds a text part and, for classification, an
//! `image_url` part (remote URL or base64 data URL). The reply text is read
//! from `choices[0].message.content`.

use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, BackendIdentity, DecodeParams, ImageRef, TextGenBackend, VisionClassifyBackend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpBackendConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    60
}

pub struct HttpChatBackend {
    config: HttpBackendConfig,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpChatBackend {
    pub fn new(config: HttpBackendConfig) -> Self {
        let token = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok());
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        HttpChatBackend { config, token, agent }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn request_body(&self, content: Value, decode: &DecodeParams) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{ "role": "user", "content": content }],
            "temperature": decode.temperature,
            "max_tokens": decode.max_tokens,
        });
        if let Some(seed) = decode.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn post(&self, body: &Value) -> Result<String, BackendError> {
        let mut req = self.agent.post(self.endpoint());
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req.send_json(body).map_err(classify_transport_error)?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transient(format!("reading response body: {e}")))?;
        match status {
            200..=299 => extract_content(&text),
            408 | 429 | 500..=599 => Err(BackendError::Transient(format!("HTTP {status}"))),
            _ => Err(BackendError::Protocol(format!("HTTP {status}: {}", truncate(&text, 200)))),
        }
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn classify_transport_error(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Io(_)
        | ureq::Error::Timeout(_)
        | ureq::Error::ConnectionFailed
        | ureq::Error::HostNotFound => BackendError::Transient(e.to_string()),
        other => BackendError::Protocol(other.to_string()),
    }
}

fn extract_content(text: &str) -> Result<String, BackendError> {
    let v: Value = serde_json::from_str(text)
        .map_err(|e| BackendError::Protocol(format!("malformed JSON response: {e}")))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::Protocol("response lacks choices[0].message.content".into()))
}

fn image_url(image: &ImageRef) -> Result<String, BackendError> {
    let s = image.as_str();
    if s.starts_with("http://") || s.starts_with("https://") || s.starts_with("data:") {
        return Ok(s.to_string());
    }
    if s.starts_with("sim://") {
        return Err(BackendError::Input(format!("{s} is a simulated image id")));
    }
    let bytes = std::fs::read(s).map_err(|e| BackendError::Input(format!("reading {s}: {e}")))?;
    let ext = std::path::Path::new(s)
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    let mime = match ext.as_str() {
        "png" => "image/png",
        "gif" => "image/gif",
        "webp" => "image/webp",
        _ => "image/jpeg",
    };
    let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
    Ok(format!("data:{mime};base64,{b64}"))
}

impl TextGenBackend for HttpChatBackend {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity::new("http", &self.config.model)
    }

    fn generate(&self, instruction: &str, decode: &DecodeParams) -> Result<String, BackendError> {
        let content = json!([{ "type": "text", "text": instruction }]);
        self.post(&self.request_body(content, decode))
    }
}

impl VisionClassifyBackend for HttpChatBackend {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity::new("http", &self.config.model)
    }

    fn classify(
        &self,
        image: &ImageRef,
        prompt: &str,
        decode: &DecodeParams,
    ) -> Result<String, BackendError> {
        let content = json!([
            { "type": "text", "text": prompt },
            { "type": "image_url", "image_url": { "url": image_url(image)? } },
        ]);
        self.post(&self.request_body(content, decode))
    }
}
