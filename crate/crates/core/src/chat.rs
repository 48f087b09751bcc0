//! Chat-model abstraction shared by the tool registry and the agent, plus a
//! fixture-replaying backend for offline runs.

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }

    pub fn tool(content: impl Into<String>) -> Self {
        Self { role: Role::Tool, content: content.into() }
    }
}

/// A model reply: free text or a structured tool call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reply {
    Text(String),
    ToolCall { name: String, args: Value },
}

impl Reply {
    pub fn text(&self) -> Option<&str> {
        match self {
            Reply::Text(t) => Some(t),
            Reply::ToolCall { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("backend error: {0}")]
pub struct BackendError(pub String);

/// Function declaration offered to the model for function calling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    /// JSON-schema object describing the arguments.
    pub parameters: Value,
}

pub trait ChatBackend: Send + Sync {
    fn identity(&self) -> String;

    fn complete(
        &self,
        messages: &[ChatMessage],
        tools: Option<&[ToolSchema]>,
    ) -> Result<Reply, BackendError>;
}

/// One recorded exchange: when the latest message contains `expect_substring`,
/// answer with `reply`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    #[serde(default)]
    pub expect_substring: String,
    pub reply: Reply,
}

/// Replays fixtures in order. Each call consumes the first unused entry whose
/// `expect_substring` occurs in the latest message; with no such entry the
/// call fails, which callers treat like any other backend failure.
#[derive(Debug)]
pub struct ScriptedBackend {
    name: String,
    entries: Vec<FixtureEntry>,
    used: Mutex<Vec<bool>>,
}

impl ScriptedBackend {
    pub fn new(name: impl Into<String>, entries: Vec<FixtureEntry>) -> Self {
        let used = Mutex::new(vec![false; entries.len()]);
        Self { name: name.into(), entries, used }
    }

    pub fn from_json(name: impl Into<String>, text: &str) -> Result<Self, BackendError> {
        let entries: Vec<FixtureEntry> =
            serde_json::from_str(text).map_err(|e| BackendError(format!("bad fixture file: {e}")))?;
        Ok(Self::new(name, entries))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError(format!("{}: {e}", path.display())))?;
        Self::from_json(format!("scripted:{}", path.display()), &text)
    }

    /// Number of entries not yet consumed.
    pub fn remaining(&self) -> usize {
        self.used.lock().expect("fixture lock").iter().filter(|u| !**u).count()
    }

    /// Marks every entry unused again.
    pub fn rewind(&self) {
        self.used.lock().expect("fixture lock").iter_mut().for_each(|u| *u = false);
    }
}

impl ChatBackend for ScriptedBackend {
    fn identity(&self) -> String {
        self.name.clone()
    }

    fn complete(
        &self,
        messages: &[ChatMessage],
        _tools: Option<&[ToolSchema]>,
    ) -> Result<Reply, BackendError> {
        let latest = messages.last().map_or("", |m| m.content.as_str());
        let mut used = self.used.lock().expect("fixture lock");
        let hit = self
            .entries
            .iter()
            .enumerate()
            .find(|(i, e)| !used[*i] && latest.contains(&e.expect_substring));
        match hit {
            Some((i, e)) => {
                used[i] = true;
                Ok(e.reply.clone())
            }
            None => Err(BackendError(format!(
                "no fixture matches message starting {:?}",
                latest.chars().take(80).collect::<String>()
            ))),
        }
    }
}

/// The last balanced `{...}` block in `text` that parses as JSON.
pub fn last_json_object(text: &str) -> Option<Value> {
    json_objects(text).pop()
}

/// Every top-level balanced `{...}` block of `text` that parses as a JSON object.
pub fn json_objects(text: &str) -> Vec<Value> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    while let Some(off) = text[start..].find('{') {
        let open = start + off;
        match balanced_end(bytes, open) {
            Some(end) => match serde_json::from_str::<Value>(&text[open..=end]) {
                Ok(v) if v.is_object() => {
                    out.push(v);
                    start = end + 1;
                }
                _ => start = open + 1,
            },
            None => start = open + 1,
        }
    }
    out
}

fn balanced_end(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_str {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}
