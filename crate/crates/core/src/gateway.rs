//! Chat-completion gateway over an OpenAI-compatible HTTP endpoint or a
//! deterministic script.
//!
//! The gateway makes exactly one attempt per call; retry policy belongs to the
//! stage runner, which can see parse outcomes.

use std::collections::BTreeMap;
use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::domain::nfc;

/// Environment variable holding the bearer token for the HTTP backend.
pub const API_KEY_ENV: &str = "CREWLINE_API_KEY";
pub const DEFAULT_TIMEOUT_MS: u64 = 120_000;
pub const SCRIPTED_MODEL: &str = "scripted";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: MessageRole::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: MessageRole::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: MessageRole::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub correlation_id: String,
    /// `<stage>:<revision_index>:<call_index>`; selects the scripted reply.
    pub script_key: Option<String>,
}

impl ChatRequest {
    pub fn new(
        model: impl Into<String>,
        messages: Vec<ChatMessage>,
        temperature: f64,
        max_tokens: u32,
        correlation_id: impl Into<String>,
    ) -> Result<Self, GatewayError> {
        let req = Self {
            model: model.into(),
            messages,
            temperature,
            max_tokens,
            correlation_id: correlation_id.into(),
            script_key: None,
        };
        req.validate()?;
        Ok(req)
    }

    pub fn with_script_key(mut self, key: impl Into<String>) -> Self {
        self.script_key = Some(key.into());
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::InvalidRequest(m.to_string()));
        match self.messages.first() {
            None => return bad("messages must not be empty"),
            Some(m) if m.role != MessageRole::System => return bad("first message must be a system message"),
            _ => {}
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad("temperature must be within [0, 2]");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub content: String,
    pub model: String,
    pub latency_ms: u64,
    pub correlation_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("request timed out after {elapsed_ms} ms (limit {timeout_ms} ms)")]
    Timeout { elapsed_ms: u64, timeout_ms: u64 },
    #[error("upstream error{}: {body}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Upstream { status: Option<u16>, body: String },
    #[error("script has no entry for key `{key}`")]
    ScriptMiss { key: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Scripted,
}

impl std::str::FromStr for BackendKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" => Ok(BackendKind::Http),
            "scripted" => Ok(BackendKind::Scripted),
            other => Err(format!("unknown backend kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub timeout_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<BTreeMap<String, String>>,
}

impl BackendConfig {
    pub fn http(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Http,
            base_url: Some(base_url.into()),
            model: Some(model.into()),
            timeout_ms: DEFAULT_TIMEOUT_MS,
            script: None,
        }
    }

    pub fn scripted(script: BTreeMap<String, String>) -> Self {
        Self {
            kind: BackendKind::Scripted,
            base_url: None,
            model: None,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            script: Some(script),
        }
    }

    /// Field paths (relative to the backend section) that violate the
    /// per-kind requirements.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        match self.kind {
            BackendKind::Http => {
                if self.base_url.as_deref().is_none_or(|u| u.trim().is_empty()) {
                    out.push(("base_url", "required for http backend".to_string()));
                } else if let Err(e) = url::Url::parse(self.base_url.as_deref().unwrap_or_default()) {
                    out.push(("base_url", format!("not a URL: {e}")));
                }
                if self.model.as_deref().is_none_or(|m| m.trim().is_empty()) {
                    out.push(("model", "required for http backend".to_string()));
                }
            }
            BackendKind::Scripted => {
                if self.script.is_none() {
                    out.push(("script", "required for scripted backend".to_string()));
                }
            }
        }
        if self.timeout_ms == 0 {
            out.push(("timeout_ms", "must be positive".to_string()));
        }
        out
    }
}

/// Key addressing one scripted reply.
pub fn script_key(stage: crate::domain::Role, revision_index: u32, call_index: u32) -> String {
    format!("{stage}:{revision_index}:{call_index}")
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: MessageRole,
    content: &'a str,
}

#[derive(Serialize)]
struct WireBody<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

/// Encodes a request as an OpenAI chat-completions body. Key order is fixed
/// (model, messages, temperature, max_tokens) and every field is always
/// present.
pub fn build_wire_body(request: &ChatRequest, model: &str) -> String {
    let body = WireBody {
        model,
        messages: request
            .messages
            .iter()
            .map(|m| WireMessage { role: m.role, content: &m.content })
            .collect(),
        temperature: request.temperature,
        max_tokens: request.max_tokens,
    };
    serde_json::to_string_pretty(&body).expect("wire body serializes")
}

#[derive(Deserialize)]
struct WireResponse {
    #[serde(default)]
    model: Option<String>,
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireResponseMessage,
}

#[derive(Deserialize)]
struct WireResponseMessage {
    content: Option<String>,
}

/// Extracts `(content, model)` from a chat-completions response body.
pub fn decode_wire_response(body: &str) -> Result<(String, Option<String>), GatewayError> {
    let resp: WireResponse = serde_json::from_str(body).map_err(|e| GatewayError::Upstream {
        status: None,
        body: format!("undecodable response ({e}): {}", truncate(body, 512)),
    })?;
    let content = resp
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| GatewayError::Upstream {
            status: None,
            body: "response has no message content".to_string(),
        })?;
    Ok((content, resp.model))
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    timeout_ms: u64,
    api_key: Option<String>,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("timeout_ms", &self.timeout_ms)
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    pub fn new(base_url: &str, model: &str, timeout_ms: u64) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            endpoint: format!("{}/v1/chat/completions", base_url.trim_end_matches('/')),
            model: model.to_string(),
            timeout_ms,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        }
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let body = build_wire_body(request, &self.model);
        let started = Instant::now();
        let mut req = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let elapsed = |started: Instant| started.elapsed().as_millis() as u64;
        let result = req.send(body.as_bytes());
        let mut response = match result {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => {
                return Err(GatewayError::Timeout { elapsed_ms: elapsed(started), timeout_ms: self.timeout_ms })
            }
            Err(e) => {
                let ms = elapsed(started);
                if ms >= self.timeout_ms {
                    return Err(GatewayError::Timeout { elapsed_ms: ms, timeout_ms: self.timeout_ms });
                }
                return Err(GatewayError::Upstream { status: None, body: e.to_string() });
            }
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(ureq::Error::Timeout(_)) => {
                return Err(GatewayError::Timeout { elapsed_ms: elapsed(started), timeout_ms: self.timeout_ms })
            }
            Err(e) => return Err(GatewayError::Upstream { status: Some(status), body: e.to_string() }),
        };
        if !(200..300).contains(&status) {
            return Err(GatewayError::Upstream { status: Some(status), body: text });
        }
        let (content, model) = decode_wire_response(&text)?;
        Ok(ChatResponse {
            content: nfc(&content),
            model: model.unwrap_or_else(|| self.model.clone()),
            latency_ms: elapsed(started),
            correlation_id: request.correlation_id.clone(),
        })
    }
}

/// Replies from a fixed key→text map. A pure function of (script, key).
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    script: BTreeMap<String, String>,
}

impl ScriptedBackend {
    pub fn new(script: BTreeMap<String, String>) -> Self {
        Self { script }
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let key = request.script_key.clone().unwrap_or_default();
        let content = self
            .script
            .get(&key)
            .ok_or(GatewayError::ScriptMiss { key })?;
        Ok(ChatResponse {
            content: nfc(content),
            model: SCRIPTED_MODEL.to_string(),
            latency_ms: 0,
            correlation_id: request.correlation_id.clone(),
        })
    }
}

/// A configured backend. Stateless per call and shareable across threads.
#[derive(Debug)]
pub enum Gateway {
    Http(HttpBackend),
    Scripted(ScriptedBackend),
}

impl Gateway {
    pub fn from_config(config: &BackendConfig) -> Result<Self, GatewayError> {
        if let Some((field, reason)) = config.violations().into_iter().next() {
            return Err(GatewayError::InvalidRequest(format!("backend.{field}: {reason}")));
        }
        Ok(match config.kind {
            BackendKind::Http => Gateway::Http(HttpBackend::new(
                config.base_url.as_deref().unwrap_or_default(),
                config.model.as_deref().unwrap_or_default(),
                config.timeout_ms,
            )),
            BackendKind::Scripted => {
                Gateway::Scripted(ScriptedBackend::new(config.script.clone().unwrap_or_default()))
            }
        })
    }

    pub fn model_name(&self) -> &str {
        match self {
            Gateway::Http(h) => &h.model,
            Gateway::Scripted(_) => SCRIPTED_MODEL,
        }
    }

    pub fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        match self {
            Gateway::Http(h) => h.chat(request),
            Gateway::Scripted(s) => s.chat(request),
        }
    }
}

/// One-shot call against a backend configuration.
pub fn chat(backend: &BackendConfig, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
    Gateway::from_config(backend)?.chat(request)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(temperature: f64) -> ChatRequest {
        ChatRequest::new(
            "m",
            vec![ChatMessage::system("sys"), ChatMessage::user("hello")],
            temperature,
            64,
            "c-1",
        )
        .unwrap()
    }

    #[test]
    fn wire_body_maps_roles_in_order() {
        let body: serde_json::Value = serde_json::from_str(&build_wire_body(&request(0.3), "aya")).unwrap();
        let roles: Vec<_> = body["messages"].as_array().unwrap().iter().map(|m| m["role"].clone()).collect();
        assert_eq!(roles, vec!["system", "user"]);
        assert_eq!(body["model"], "aya");
    }

    #[test]
    fn zero_temperature_is_kept() {
        let text = build_wire_body(&request(0.0), "aya");
        let body: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(body["temperature"].as_f64(), Some(0.0));
        assert!(text.contains("\"temperature\": 0.0"));
    }

    #[test]
    fn key_order_is_stable() {
        let text = build_wire_body(&request(0.3), "aya");
        let pos = |k: &str| text.find(&format!("\"{k}\"")).unwrap();
        assert!(pos("model") < pos("messages"));
        assert!(pos("messages") < pos("temperature"));
        assert!(pos("temperature") < pos("max_tokens"));
    }

    #[test]
    fn request_validation() {
        assert!(ChatRequest::new("m", vec![], 0.3, 1, "c").is_err());
        assert!(ChatRequest::new("m", vec![ChatMessage::user("x")], 0.3, 1, "c").is_err());
        assert!(ChatRequest::new("m", vec![ChatMessage::system("x")], 2.5, 1, "c").is_err());
        assert!(ChatRequest::new("m", vec![ChatMessage::system("x")], 0.3, 0, "c").is_err());
    }

    #[test]
    fn scripted_lookup_and_miss() {
        let mut script = BTreeMap::new();
        script.insert("translation:0:0".to_string(), r#"{"translated_text":"mahaan prakaash utsav"}"#.to_string());
        let gw = Gateway::from_config(&BackendConfig::scripted(script)).unwrap();
        let req = request(0.3).with_script_key("translation:0:0");
        let a = gw.chat(&req).unwrap();
        let b = gw.chat(&req).unwrap();
        assert!(a.content.contains("mahaan prakaash utsav"));
        assert_eq!(a, b);
        assert_eq!(a.correlation_id, "c-1");
        let miss = gw.chat(&request(0.3).with_script_key("synthesis:2:1")).unwrap_err();
        assert_eq!(miss, GatewayError::ScriptMiss { key: "synthesis:2:1".into() });
        assert!(miss.to_string().contains("synthesis:2:1"));
    }

    #[test]
    fn http_config_requires_url_and_model() {
        let mut cfg = BackendConfig::http("http://localhost:4000", "aya");
        assert!(cfg.violations().is_empty());
        cfg.model = None;
        cfg.base_url = Some("not a url".into());
        let fields: Vec<_> = cfg.violations().into_iter().map(|(f, _)| f).collect();
        assert_eq!(fields, vec!["base_url", "model"]);
    }

    #[test]
    fn decode_rejects_missing_content() {
        assert!(decode_wire_response(r#"{"choices":[]}"#).is_err());
        let (c, m) = decode_wire_response(
            r#"{"model":"aya","choices":[{"message":{"role":"assistant","content":"hi"}}]}"#,
        )
        .unwrap();
        assert_eq!((c.as_str(), m.as_deref()), ("hi", Some("aya")));
    }
}
