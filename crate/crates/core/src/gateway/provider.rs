//! Thin adapters over provider chat APIs.
//!
//! Credentials come from `ANTHROPIC_API_KEY` and `OPENAI_API_KEY`; the
//! endpoints can be moved with `ANTHROPIC_BASE_URL` and `OPENAI_BASE_URL`.
//! A model id may name its provider explicitly (`anthropic/...`,
//! `openai/...`); otherwise ids starting with `claude` go to Anthropic and
//! everything else to OpenAI.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use reqwest::blocking::Client;
use serde_json::{json, Value};

use super::{ChatTranscript, GatewayError, GenerationParams, Role};

pub trait Provider: Send + Sync {
    /// Returns the assistant text. A provider-side rate limit must be
    /// reported as [`GatewayError::RateLimited`] so the gateway can retry.
    fn complete(
        &self,
        transcript: &ChatTranscript,
        params: &GenerationParams,
    ) -> Result<String, GatewayError>;
}

impl<F> Provider for F
where
    F: Fn(&ChatTranscript, &GenerationParams) -> Result<String, GatewayError> + Send + Sync,
{
    fn complete(
        &self,
        transcript: &ChatTranscript,
        params: &GenerationParams,
    ) -> Result<String, GatewayError> {
        self(transcript, params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProviderKind {
    Anthropic,
    OpenAi,
}

/// Splits an optional provider prefix off a model id.
pub fn route(model_id: &str) -> (ProviderKind, &str) {
    if let Some(rest) = model_id.strip_prefix("anthropic/") {
        (ProviderKind::Anthropic, rest)
    } else if let Some(rest) = model_id.strip_prefix("openai/") {
        (ProviderKind::OpenAi, rest)
    } else if model_id.starts_with("claude") {
        (ProviderKind::Anthropic, model_id)
    } else {
        (ProviderKind::OpenAi, model_id)
    }
}

fn http_client(timeout: Duration) -> Result<Client, GatewayError> {
    Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| GatewayError::Transport(e.to_string()))
}

fn credential(var: &str) -> Result<String, GatewayError> {
    std::env::var(var)
        .ok()
        .filter(|v| !v.is_empty())
        .ok_or_else(|| GatewayError::MissingCredential {
            var: var.to_string(),
        })
}

fn post_json(
    request: reqwest::blocking::RequestBuilder,
    body: &Value,
) -> Result<Value, GatewayError> {
    let response = request
        .json(body)
        .send()
        .map_err(|e| GatewayError::Transport(e.to_string()))?;
    let status = response.status();
    let text = response
        .text()
        .map_err(|e| GatewayError::Transport(e.to_string()))?;
    if status.as_u16() == 429 {
        return Err(GatewayError::RateLimited { attempts: 1 });
    }
    if !status.is_success() {
        return Err(GatewayError::Provider {
            status: status.as_u16(),
            body: text,
        });
    }
    serde_json::from_str(&text).map_err(|e| GatewayError::Provider {
        status: status.as_u16(),
        body: format!("unreadable response ({e}): {text}"),
    })
}

pub struct Anthropic {
    client: Client,
    api_key: String,
    base_url: String,
}

impl Anthropic {
    pub fn from_env(timeout: Duration) -> Result<Self, GatewayError> {
        Ok(Self {
            client: http_client(timeout)?,
            api_key: credential("ANTHROPIC_API_KEY")?,
            base_url: std::env::var("ANTHROPIC_BASE_URL")
                .unwrap_or_else(|_| "https://api.anthropic.com".into()),
        })
    }

    pub fn request_body(transcript: &ChatTranscript, params: &GenerationParams) -> Value {
        let (_, model) = route(&params.model_id);
        let system: Vec<&str> = transcript
            .messages
            .iter()
            .filter(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
            .collect();
        let messages: Vec<Value> = transcript
            .messages
            .iter()
            .filter(|m| m.role != Role::System)
            .map(|m| json!({ "role": m.role.as_str(), "content": m.content }))
            .collect();
        json!({
            "model": model,
            "max_tokens": params.max_output_tokens,
            "temperature": params.temperature,
            "system": system.join("\n\n"),
            "messages": messages,
        })
    }
}

impl Provider for Anthropic {
    fn complete(
        &self,
        transcript: &ChatTranscript,
        params: &GenerationParams,
    ) -> Result<String, GatewayError> {
        let request = self
            .client
            .post(format!("{}/v1/messages", self.base_url))
            .header("x-api-key", &self.api_key)
            .header("anthropic-version", "2023-06-01");
        let reply = post_json(request, &Self::request_body(transcript, params))?;
        let text: String = reply["content"]
            .as_array()
            .into_iter()
            .flatten()
            .filter(|block| block["type"] == "text")
            .filter_map(|block| block["text"].as_str())
            .collect();
        Ok(text)
    }
}

pub struct OpenAi {
    client: Client,
    api_key: String,
    base_url: String,
}

impl OpenAi {
    pub fn from_env(timeout: Duration) -> Result<Self, GatewayError> {
        Ok(Self {
            client: http_client(timeout)?,
            api_key: credential("OPENAI_API_KEY")?,
            base_url: std::env::var("OPENAI_BASE_URL")
                .unwrap_or_else(|_| "https://api.openai.com".into()),
        })
    }

    pub fn request_body(transcript: &ChatTranscript, params: &GenerationParams) -> Value {
        let (_, model) = route(&params.model_id);
        let messages: Vec<Value> = transcript
            .messages
            .iter()
            .map(|m| json!({ "role": m.role.as_str(), "content": m.content }))
            .collect();
        let mut body = json!({
            "model": model,
            "messages": messages,
            "max_completion_tokens": params.max_output_tokens,
        });
        // Reasoning models only accept their default temperature.
        if !is_reasoning_model(model) {
            body["temperature"] = json!(params.temperature);
        }
        body
    }
}

fn is_reasoning_model(model: &str) -> bool {
    let mut chars = model.chars();
    chars.next() == Some('o') && chars.next().is_some_and(|c| c.is_ascii_digit())
}

impl Provider for OpenAi {
    fn complete(
        &self,
        transcript: &ChatTranscript,
        params: &GenerationParams,
    ) -> Result<String, GatewayError> {
        let request = self
            .client
            .post(format!("{}/v1/chat/completions", self.base_url))
            .bearer_auth(&self.api_key);
        let reply = post_json(request, &Self::request_body(transcript, params))?;
        reply["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| GatewayError::Provider {
                status: 200,
                body: reply.to_string(),
            })
    }
}

/// Dispatches on the model id, building each adapter on first use so that
/// credentials are only required for providers actually called.
pub struct RoutedProvider {
    timeout: Duration,
    adapters: Mutex<HashMap<ProviderKind, Arc<dyn Provider>>>,
}

impl RoutedProvider {
    pub fn new(timeout: Duration) -> Self {
        Self {
            timeout,
            adapters: Mutex::new(HashMap::new()),
        }
    }

    fn adapter(&self, kind: ProviderKind) -> Result<Arc<dyn Provider>, GatewayError> {
        let mut adapters = self.adapters.lock().expect("adapter lock");
        if let Some(a) = adapters.get(&kind) {
            return Ok(Arc::clone(a));
        }
        let adapter: Arc<dyn Provider> = match kind {
            ProviderKind::Anthropic => Arc::new(Anthropic::from_env(self.timeout)?),
            ProviderKind::OpenAi => Arc::new(OpenAi::from_env(self.timeout)?),
        };
        adapters.insert(kind, Arc::clone(&adapter));
        Ok(adapter)
    }
}

impl Provider for RoutedProvider {
    fn complete(
        &self,
        transcript: &ChatTranscript,
        params: &GenerationParams,
    ) -> Result<String, GatewayError> {
        let (kind, _) = route(&params.model_id);
        self.adapter(kind)?.complete(transcript, params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::StageTag;

    #[test]
    fn routing() {
        assert_eq!(route("claude-3-7-sonnet-20250219").0, ProviderKind::Anthropic);
        assert_eq!(route("o4-mini"), (ProviderKind::OpenAi, "o4-mini"));
        assert_eq!(route("anthropic/x"), (ProviderKind::Anthropic, "x"));
    }

    #[test]
    fn wire_bodies() {
        let mut t = ChatTranscript::with_system("be terse");
        t.push_user("hi", StageTag::Fix);
        let mut params = GenerationParams::new("claude-x");
        let a = Anthropic::request_body(&t, &params);
        assert_eq!(a["system"], "be terse");
        assert_eq!(a["messages"].as_array().unwrap().len(), 1);
        params.model_id = "o4-mini".into();
        let o = OpenAi::request_body(&t, &params);
        assert_eq!(o["messages"][0]["role"], "system");
        assert!(o.get("temperature").is_none());
        params.model_id = "gpt-4o".into();
        assert_eq!(OpenAi::request_body(&t, &params)["temperature"], 0.0);
    }
}
