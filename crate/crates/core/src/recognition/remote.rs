use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{RecognitionRequest, RecognizeError, Recognizer};
use crate::error::{invalid, Result};

pub const ENV_API_BASE: &str = "SRRDOC_API_BASE";
pub const ENV_API_KEY: &str = "SRRDOC_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL; requests go to `{base}/chat/completions`.
    pub api_base: String,
    pub model: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

fn default_timeout() -> f64 {
    60.0
}

impl RemoteConfig {
    /// Fill endpoint and key from the environment where unset.
    pub fn with_env(mut self) -> Self {
        if self.api_base.is_empty() {
            if let Ok(base) = std::env::var(ENV_API_BASE) {
                self.api_base = base;
            }
        }
        if self.api_key.is_none() {
            self.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        }
        self
    }
}

/// Client for an HTTP chat-completions endpoint.
#[derive(Debug, Clone)]
pub struct RemoteRecognizer {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
}

impl RemoteRecognizer {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        if config.api_base.is_empty() {
            return Err(invalid(format!("remote recognizer needs an endpoint (set {ENV_API_BASE})")));
        }
        if !(config.timeout_secs > 0.0 && config.timeout_secs.is_finite()) {
            return Err(invalid("timeout must be positive"));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| invalid(format!("http client: {e}")))?;
        Ok(Self { config, client })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.api_base.trim_end_matches('/'))
    }

    pub fn request_body(&self, req: &RecognitionRequest) -> Value {
        let mut parts = vec![json!({"type": "text", "text": req.prompt})];
        if let Some(png) = &req.image_png {
            let data = base64::engine::general_purpose::STANDARD.encode(png);
            parts.push(json!({
                "type": "image_url",
                "image_url": {"url": format!("data:image/png;base64,{data}")}
            }));
        }
        json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": parts}]
        })
    }
}

impl Recognizer for RemoteRecognizer {
    fn recognize(&self, req: &RecognitionRequest) -> std::result::Result<String, RecognizeError> {
        let mut call = self.client.post(self.endpoint()).json(&self.request_body(req));
        if let Some(key) = &self.config.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().map_err(|e| {
            if e.is_timeout() || e.is_connect() || e.is_request() {
                RecognizeError::Retryable(e.to_string())
            } else {
                RecognizeError::Fatal(e.to_string())
            }
        })?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(RecognizeError::Retryable(format!("http {status}")));
        }
        if !status.is_success() {
            return Err(RecognizeError::Fatal(format!("http {status}")));
        }
        let body: Value = resp
            .json()
            .map_err(|e| RecognizeError::Fatal(format!("response is not JSON: {e}")))?;
        body.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| RecognizeError::Fatal("response lacks choices[0].message.content".into()))
    }

    fn wants_image(&self) -> bool {
        true
    }
}
