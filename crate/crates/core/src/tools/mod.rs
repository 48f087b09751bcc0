//! Function-calling tool registry: descriptors with internal prompts, summaries,
//! ranking against a task, argument validation and guarded invocation.

mod builtin;
mod rank;
mod schema;
mod summary;

pub use builtin::{builtin_tools, data_tools, estimator_tools, DEFAULT_TABLE};
pub use rank::{lexical_score, rank_tools, tokenize};
pub use schema::{validate_args, ValidatedArgs};
pub use summary::{extract_summary, summarize_tool};

use std::collections::BTreeMap;
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::chat::ToolSchema;
use crate::data::DataTable;
use crate::error::EconError;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolError {
    #[error("a tool named '{0}' is already registered")]
    DuplicateName(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("malformed summary: {0}")]
    MalformedSummary(String),
    #[error("missing required argument '{0}'")]
    MissingRequired(String),
    #[error("unknown argument '{0}'")]
    UnknownKey(String),
    #[error("argument '{name}' should be {expected}, got {got}")]
    KindMismatch { name: String, expected: String, got: String },
    #[error("unknown tool '{0}'")]
    UnknownTool(String),
}

/// Parameter kinds of the minimal argument schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    String,
    Number,
    Integer,
    Boolean,
    Array,
    Enum(Vec<String>),
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamKind::String => f.write_str("string"),
            ParamKind::Number => f.write_str("number"),
            ParamKind::Integer => f.write_str("integer"),
            ParamKind::Boolean => f.write_str("boolean"),
            ParamKind::Array => f.write_str("array"),
            ParamKind::Enum(v) => write!(f, "one of [{}]", v.join(", ")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub required: bool,
    #[serde(default)]
    pub default: Option<Value>,
    pub description: String,
}

/// Four-aspect digest of a tool's internal prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSummary {
    pub target_scenario: String,
    pub input_requirements: String,
    pub output_structure: String,
    pub special_requirements: String,
}

impl ToolSummary {
    pub fn validate(&self) -> Result<(), ToolError> {
        for (field, value) in [
            ("target_scenario", &self.target_scenario),
            ("input_requirements", &self.input_requirements),
            ("output_structure", &self.output_structure),
            ("special_requirements", &self.special_requirements),
        ] {
            if value.trim().is_empty() {
                return Err(ToolError::MalformedSummary(format!("'{field}' is empty")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub version: String,
    pub internal_prompt: String,
    #[serde(default)]
    pub summary: Option<ToolSummary>,
    pub parameters: Vec<ParamSpec>,
}

impl ToolDescriptor {
    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn check_schema(&self) -> Result<(), ToolError> {
        let bad = |m: String| Err(ToolError::InvalidSchema(m));
        if self.name.trim().is_empty() {
            return bad("tool name is empty".into());
        }
        if self.internal_prompt.trim().is_empty() {
            return bad(format!("{}: internal prompt is empty", self.name));
        }
        for (i, p) in self.parameters.iter().enumerate() {
            if self.parameters[..i].iter().any(|q| q.name == p.name) {
                return bad(format!("{}: parameter '{}' declared twice", self.name, p.name));
            }
            if p.required && p.default.is_some() {
                return bad(format!("{}: required parameter '{}' has a default", self.name, p.name));
            }
            if let ParamKind::Enum(values) = &p.kind {
                if values.is_empty() {
                    return bad(format!("{}: enum '{}' has no values", self.name, p.name));
                }
            }
            if let Some(d) = &p.default {
                if !d.is_null() && schema::check_kind(&p.name, &p.kind, d).is_err() {
                    return bad(format!("{}: default of '{}' is not {}", self.name, p.name, p.kind));
                }
            }
        }
        Ok(())
    }

    /// Function declaration in the JSON-schema shape chat APIs expect.
    pub fn function_schema(&self) -> ToolSchema {
        let mut props = Map::new();
        let mut required = Vec::new();
        for p in &self.parameters {
            let mut prop = Map::new();
            match &p.kind {
                ParamKind::Enum(values) => {
                    prop.insert("type".into(), "string".into());
                    prop.insert("enum".into(), values.clone().into());
                }
                ParamKind::Array => {
                    prop.insert("type".into(), "array".into());
                    prop.insert("items".into(), serde_json::json!({"type": "string"}));
                }
                kind => {
                    prop.insert("type".into(), kind.to_string().into());
                }
            }
            prop.insert("description".into(), p.description.clone().into());
            if let Some(d) = &p.default {
                prop.insert("default".into(), d.clone());
            }
            props.insert(p.name.clone(), Value::Object(prop));
            if p.required {
                required.push(Value::from(p.name.clone()));
            }
        }
        let description = self
            .summary
            .as_ref()
            .map_or_else(|| self.name.clone(), |s| s.target_scenario.clone());
        ToolSchema {
            name: self.name.clone(),
            description,
            parameters: serde_json::json!({
                "type": "object",
                "properties": props,
                "required": required,
                "additionalProperties": false,
            }),
        }
    }
}

/// Named tables visible to tools during one invocation.
#[derive(Debug, Clone, Default)]
pub struct ToolContext {
    pub tables: BTreeMap<String, DataTable>,
    /// Base directory for relative file paths.
    pub data_dir: PathBuf,
}

impl ToolContext {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self { tables: BTreeMap::new(), data_dir: data_dir.into() }
    }

    pub fn table(&self, name: &str) -> Result<&DataTable, EconError> {
        self.tables.get(name).ok_or_else(|| {
            let known: Vec<&str> = self.tables.keys().map(String::as_str).collect();
            EconError::InvalidArgument(format!(
                "no table named '{name}' is loaded (available: {})",
                if known.is_empty() { "none".to_string() } else { known.join(", ") }
            ))
        })
    }
}

/// What a handler returns: a JSON result and optionally a table to store.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolValue {
    pub result: Value,
    pub table: Option<(String, DataTable)>,
}

impl ToolValue {
    pub fn json(result: Value) -> Self {
        Self { result, table: None }
    }
}

pub type Handler = dyn Fn(&ToolContext, &ValidatedArgs) -> Result<ToolValue, EconError> + Send + Sync;

#[derive(Clone)]
pub struct Tool {
    pub descriptor: ToolDescriptor,
    pub handler: Arc<Handler>,
}

impl Tool {
    pub fn new<F>(descriptor: ToolDescriptor, handler: F) -> Self
    where
        F: Fn(&ToolContext, &ValidatedArgs) -> Result<ToolValue, EconError> + Send + Sync + 'static,
    {
        Self { descriptor, handler: Arc::new(handler) }
    }
}

impl fmt::Debug for Tool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tool").field("descriptor", &self.descriptor).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolOutcome {
    pub tool: String,
    pub status: OutcomeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
    pub elapsed_ms: u64,
    pub echo_args: Value,
    /// Table produced by a data tool, with the name to store it under.
    #[serde(skip)]
    pub table: Option<(String, DataTable)>,
}

impl ToolOutcome {
    pub fn is_ok(&self) -> bool {
        self.status == OutcomeStatus::Ok
    }

    fn error(tool: &str, message: String, echo_args: Value, elapsed_ms: u64) -> Self {
        Self {
            tool: tool.into(),
            status: OutcomeStatus::Error,
            result: None,
            error_message: Some(message),
            elapsed_ms,
            echo_args,
            table: None,
        }
    }
}

fn version_key(v: &str) -> Vec<u64> {
    v.split('.').map(|p| p.trim().parse().unwrap_or(0)).collect()
}

/// Immutable set of tools; registration returns a new registry.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    tools: BTreeMap<String, Tool>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The ten built-in estimators.
    pub fn estimators() -> Self {
        Self::from_tools(estimator_tools())
    }

    /// Estimators plus the data-preparation tools.
    pub fn builtin() -> Self {
        Self::from_tools(builtin_tools())
    }

    fn from_tools(tools: Vec<Tool>) -> Self {
        tools.into_iter().fold(Self::new(), |r, t| {
            r.register_tool(t).expect("built-in tool descriptors are valid")
        })
    }

    /// Adds `tool`, filling its summary from the internal prompt when absent.
    /// A name may be re-registered only with a strictly newer version.
    pub fn register_tool(&self, mut tool: Tool) -> Result<Self, ToolError> {
        tool.descriptor.check_schema()?;
        if let Some(existing) = self.tools.get(&tool.descriptor.name) {
            if version_key(&tool.descriptor.version) <= version_key(&existing.descriptor.version) {
                return Err(ToolError::DuplicateName(tool.descriptor.name));
            }
        }
        match &tool.descriptor.summary {
            Some(s) => s.validate()?,
            None => tool.descriptor.summary = Some(extract_summary(&tool.descriptor.internal_prompt)?),
        }
        let mut tools = self.tools.clone();
        tools.insert(tool.descriptor.name.clone(), tool);
        Ok(Self { tools })
    }

    /// Tool names in sorted order.
    pub fn list_tools(&self) -> Vec<String> {
        self.tools.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tool> {
        self.tools.get(name)
    }

    pub fn descriptor(&self, name: &str) -> Result<&ToolDescriptor, ToolError> {
        self.get(name).map(|t| &t.descriptor).ok_or_else(|| ToolError::UnknownTool(name.into()))
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &ToolDescriptor> {
        self.tools.values().map(|t| &t.descriptor)
    }

    pub fn summary(&self, name: &str) -> Option<&ToolSummary> {
        self.get(name).and_then(|t| t.descriptor.summary.as_ref())
    }

    /// Validates `args`, runs the handler and captures every failure,
    /// including panics, as an error outcome.
    pub fn invoke_tool(&self, name: &str, args: &Value, context: &ToolContext) -> ToolOutcome {
        let start = Instant::now();
        let ms = |s: Instant| s.elapsed().as_millis() as u64;
        let Some(tool) = self.tools.get(name) else {
            return ToolOutcome::error(name, ToolError::UnknownTool(name.into()).to_string(), args.clone(), 0);
        };
        let validated = match validate_args(&tool.descriptor, args) {
            Ok(v) => v,
            Err(e) => return ToolOutcome::error(name, e.to_string(), args.clone(), ms(start)),
        };
        let echo = validated.to_value();
        let run = catch_unwind(AssertUnwindSafe(|| (tool.handler)(context, &validated)));
        match run {
            Ok(Ok(value)) => ToolOutcome {
                tool: name.into(),
                status: OutcomeStatus::Ok,
                result: Some(value.result),
                error_message: None,
                elapsed_ms: ms(start),
                echo_args: echo,
                table: value.table,
            },
            Ok(Err(e)) => ToolOutcome::error(name, e.to_string(), echo, ms(start)),
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "unknown panic".into());
                ToolOutcome::error(name, format!("internal error: {msg}"), echo, ms(start))
            }
        }
    }
}
