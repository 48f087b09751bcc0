use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use econ_core::chat::{BackendError, ChatBackend, ChatMessage, Reply, Role, ScriptedBackend, ToolSchema};
use serde_json::{json, Value};

use crate::error::AgentError;
use crate::rules::RuleBackend;

pub const ENDPOINT_VAR: &str = "ECON_AGENT_ENDPOINT";
pub const API_KEY_VAR: &str = "ECON_AGENT_API_KEY";
pub const MODEL_VAR: &str = "ECON_AGENT_MODEL";

#[derive(Clone)]
pub enum BackendConfig {
    /// Replays a fixture file.
    Scripted(PathBuf),
    /// An OpenAI-compatible chat-completions endpoint.
    Live { endpoint: String, api_key: Option<String>, model: String },
    Rules,
    Custom(Arc<dyn ChatBackend>),
}

impl fmt::Debug for BackendConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendConfig::Scripted(p) => f.debug_tuple("Scripted").field(p).finish(),
            BackendConfig::Live { endpoint, model, .. } => {
                f.debug_struct("Live").field("endpoint", endpoint).field("model", model).finish_non_exhaustive()
            }
            BackendConfig::Rules => f.write_str("Rules"),
            BackendConfig::Custom(b) => f.debug_tuple("Custom").field(&b.identity()).finish(),
        }
    }
}

impl BackendConfig {
    /// Parses a `--backend` value: `rules`, `scripted` (needs `fixtures`) or
    /// `live` (reads the endpoint, key and model from the environment).
    pub fn from_spec(kind: &str, fixtures: Option<PathBuf>) -> Result<Self, AgentError> {
        match kind {
            "rules" => Ok(BackendConfig::Rules),
            "scripted" => fixtures
                .map(BackendConfig::Scripted)
                .ok_or_else(|| AgentError::Config("the scripted backend needs a fixture file".into())),
            "live" => {
                let endpoint = std::env::var(ENDPOINT_VAR)
                    .map_err(|_| AgentError::Config(format!("{ENDPOINT_VAR} is not set")))?;
                let model = std::env::var(MODEL_VAR).unwrap_or_else(|_| "gpt-4o".into());
                Ok(BackendConfig::Live { endpoint, api_key: std::env::var(API_KEY_VAR).ok(), model })
            }
            other => Err(AgentError::UnknownBackend(other.to_string())),
        }
    }

    pub fn resolve(&self) -> Result<Arc<dyn ChatBackend>, AgentError> {
        Ok(match self {
            BackendConfig::Scripted(path) => {
                Arc::new(ScriptedBackend::from_file(path).map_err(|e| AgentError::Config(e.to_string()))?)
            }
            BackendConfig::Live { endpoint, api_key, model } => {
                Arc::new(LiveBackend::new(endpoint.clone(), api_key.clone(), model.clone())?)
            }
            BackendConfig::Rules => Arc::new(RuleBackend),
            BackendConfig::Custom(b) => Arc::clone(b),
        })
    }
}

/// Chat-completions client with function calling.
pub struct LiveBackend {
    endpoint: String,
    api_key: Option<String>,
    model: String,
    client: reqwest::blocking::Client,
}

impl LiveBackend {
    pub fn new(endpoint: String, api_key: Option<String>, model: String) -> Result<Self, AgentError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| AgentError::Config(e.to_string()))?;
        Ok(Self { endpoint, api_key, model, client })
    }

    fn body(&self, messages: &[ChatMessage], tools: Option<&[ToolSchema]>) -> Value {
        let messages: Vec<Value> = messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::System => "system",
                    Role::Assistant => "assistant",
                    Role::User | Role::Tool => "user",
                };
                json!({"role": role, "content": m.content})
            })
            .collect();
        let mut body = json!({"model": self.model, "messages": messages, "temperature": 0});
        if let Some(tools) = tools.filter(|t| !t.is_empty()) {
            let tools: Vec<Value> = tools
                .iter()
                .map(|t| json!({"type": "function", "function": {"name": t.name, "description": t.description, "parameters": t.parameters}}))
                .collect();
            body["tools"] = json!(tools);
        }
        body
    }
}

/// First choice of a chat-completions response as a reply.
pub fn parse_completion(response: &Value) -> Result<Reply, BackendError> {
    let message = response
        .pointer("/choices/0/message")
        .ok_or_else(|| BackendError("response has no choices".into()))?;
    if let Some(call) = message.pointer("/tool_calls/0/function") {
        let name = call.get("name").and_then(Value::as_str).unwrap_or_default().to_string();
        let args = match call.get("arguments") {
            Some(Value::String(s)) => {
                serde_json::from_str(s).map_err(|e| BackendError(format!("tool-call arguments are not JSON: {e}")))?
            }
            Some(v) => v.clone(),
            None => json!({}),
        };
        return Ok(Reply::ToolCall { name, args });
    }
    message
        .get("content")
        .and_then(Value::as_str)
        .map(|t| Reply::Text(t.to_string()))
        .ok_or_else(|| BackendError("response message has neither content nor tool calls".into()))
}

impl ChatBackend for LiveBackend {
    fn identity(&self) -> String {
        format!("live:{}", self.model)
    }

    fn complete(&self, messages: &[ChatMessage], tools: Option<&[ToolSchema]>) -> Result<Reply, BackendError> {
        let mut request = self.client.post(&self.endpoint).json(&self.body(messages, tools));
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| BackendError(e.to_string()))?;
        let status = response.status();
        let value: Value = response.json().map_err(|e| BackendError(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError(format!("endpoint returned {status}: {value}")));
        }
        parse_completion(&value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completion_shapes() {
        let call = json!({"choices": [{"message": {"tool_calls": [{"function": {"name": "ols", "arguments": "{\"outcome\": \"y\"}"}}]}}]});
        assert_eq!(parse_completion(&call).unwrap(), Reply::ToolCall { name: "ols".into(), args: json!({"outcome": "y"}) });
        let text = json!({"choices": [{"message": {"content": "new_task"}}]});
        assert_eq!(parse_completion(&text).unwrap(), Reply::Text("new_task".into()));
        assert!(parse_completion(&json!({})).is_err());
    }

    #[test]
    fn unknown_backend() {
        assert_eq!(
            BackendConfig::from_spec("gpt", None).unwrap_err(),
            AgentError::UnknownBackend("gpt".into())
        );
        assert!(BackendConfig::from_spec("scripted", None).is_err());
    }
}
