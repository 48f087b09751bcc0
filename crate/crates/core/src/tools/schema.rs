use serde_json::{Map, Value};

use super::{ParamKind, ToolDescriptor, ToolError};
use crate::error::EconError;

/// Arguments that passed [`validate_args`]: every key is declared, kinds
/// match and defaults are filled in.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidatedArgs(Map<String, Value>);

impl ValidatedArgs {
    pub fn to_value(&self) -> Value {
        Value::Object(self.0.clone())
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.0.get(name).filter(|v| !v.is_null())
    }

    pub fn str(&self, name: &str) -> Option<&str> {
        self.get(name).and_then(Value::as_str)
    }

    pub fn req_str(&self, name: &str) -> Result<&str, EconError> {
        self.str(name)
            .ok_or_else(|| EconError::InvalidArgument(format!("argument '{name}' is required")))
    }

    pub fn strings(&self, name: &str) -> Vec<String> {
        self.get(name)
            .and_then(Value::as_array)
            .map(|a| {
                a.iter()
                    .map(|v| match v {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn number(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(Value::as_f64)
    }

    pub fn integer(&self, name: &str) -> Option<i64> {
        self.get(name).and_then(Value::as_i64)
    }

    pub fn boolean(&self, name: &str) -> Option<bool> {
        self.get(name).and_then(Value::as_bool)
    }
}

fn json_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(n) if n.is_i64() || n.is_u64() => "integer",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Checks one value against its declared kind, returning the (possibly
/// coerced) value.
pub(crate) fn check_kind(name: &str, kind: &ParamKind, v: &Value) -> Result<Value, ToolError> {
    let mismatch = || ToolError::KindMismatch {
        name: name.into(),
        expected: kind.to_string(),
        got: match (kind, v) {
            (ParamKind::Enum(_), Value::String(s)) => format!("\"{s}\""),
            _ => json_kind(v).into(),
        },
    };
    match (kind, v) {
        (ParamKind::String, Value::String(_))
        | (ParamKind::Boolean, Value::Bool(_))
        | (ParamKind::Number, Value::Number(_)) => Ok(v.clone()),
        (ParamKind::Integer, Value::Number(n)) => {
            if n.is_i64() || n.is_u64() {
                Ok(v.clone())
            } else {
                match n.as_f64() {
                    Some(x) if x.fract() == 0.0 && x.abs() < 9.0e15 => Ok(Value::from(x as i64)),
                    _ => Err(mismatch()),
                }
            }
        }
        (ParamKind::Array, Value::Array(items)) => {
            if items.iter().all(|i| i.is_string() || i.is_number() || i.is_boolean()) {
                Ok(v.clone())
            } else {
                Err(mismatch())
            }
        }
        (ParamKind::Enum(values), Value::String(s)) if values.contains(s) => Ok(v.clone()),
        _ => Err(mismatch()),
    }
}

/// Checks `args` against the descriptor: unknown keys are rejected, required
/// parameters must be present, kinds must match (integers are accepted where
/// numbers are expected) and defaults fill omitted optional parameters.
/// A null value counts as absent.
pub fn validate_args(descriptor: &ToolDescriptor, args: &Value) -> Result<ValidatedArgs, ToolError> {
    let empty = Map::new();
    let obj = match args {
        Value::Object(m) => m,
        Value::Null => &empty,
        other => {
            return Err(ToolError::KindMismatch {
                name: "arguments".into(),
                expected: "object".into(),
                got: json_kind(other).into(),
            })
        }
    };
    if let Some(k) = obj.keys().find(|k| descriptor.param(k).is_none()) {
        return Err(ToolError::UnknownKey(k.clone()));
    }
    let mut out = Map::new();
    for p in &descriptor.parameters {
        match obj.get(&p.name).filter(|v| !v.is_null()) {
            Some(v) => {
                out.insert(p.name.clone(), check_kind(&p.name, &p.kind, v)?);
            }
            None if p.required => return Err(ToolError::MissingRequired(p.name.clone())),
            None => {
                if let Some(d) = p.default.as_ref().filter(|d| !d.is_null()) {
                    out.insert(p.name.clone(), d.clone());
                }
            }
        }
    }
    Ok(ValidatedArgs(out))
}
