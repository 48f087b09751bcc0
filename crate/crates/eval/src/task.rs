use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodFamily {
    OlsPanel,
    Propensity,
    Iv,
    Did,
    Rdd,
}

impl MethodFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            MethodFamily::OlsPanel => "ols_panel",
            MethodFamily::Propensity => "propensity",
            MethodFamily::Iv => "iv",
            MethodFamily::Did => "did",
            MethodFamily::Rdd => "rdd",
        }
    }

    /// Method name used in prompts when a task does not give one.
    pub fn default_name(&self) -> &'static str {
        match self {
            MethodFamily::OlsPanel => "OLS regression",
            MethodFamily::Propensity => "propensity score regression",
            MethodFamily::Iv => "IV-2SLS",
            MethodFamily::Did => "difference-in-differences",
            MethodFamily::Rdd => "regression discontinuity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskTag {
    DataProcessing,
    CovarianceAdjustment,
    FixedEffects,
}

impl TaskTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskTag::DataProcessing => "data_processing",
            TaskTag::CovarianceAdjustment => "covariance_adjustment",
            TaskTag::FixedEffects => "fixed_effects",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Expected {
    pub coefficient: f64,
    pub standard_error: f64,
    pub p_value: f64,
}

/// One benchmark task and its standard answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub method: MethodFamily,
    /// Method wording for the prompt, e.g. "Staggered DID Event Study".
    #[serde(default)]
    pub method_name: Option<String>,
    pub treatment: String,
    pub outcome: String,
    #[serde(default)]
    pub controls: Vec<String>,
    #[serde(default)]
    pub requirements: String,
    pub data_path: String,
    pub expected: Expected,
    #[serde(default)]
    pub tags: Vec<TaskTag>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |msg: &str| Err(EvalError::Corpus(format!("task '{}': {msg}", self.id)));
        if !(self.expected.standard_error > 0.0) {
            return bad("expected standard error must be positive");
        }
        if !(0.0..=1.0).contains(&self.expected.p_value) {
            return bad("expected p-value must lie in [0, 1]");
        }
        if !self.expected.coefficient.is_finite() {
            return bad("expected coefficient must be finite");
        }
        Ok(())
    }
}

pub const JSON_SENTENCE: &str = "At the end of the program, please print the coefficient, standard error and \
p-value of the effect in a json format like {\"coefficient\": 1, \"standard_error\": 2, \"p-value\": 0.5}, \
and output the json string as a .json file.";

/// The fixed task prompt. The requirements paragraph is left out when a
/// task has none.
pub fn build_prompt(task: &TaskSpec) -> String {
    let method = task.method_name.as_deref().unwrap_or(task.method.default_name());
    let controls = if task.controls.is_empty() {
        "There is no control variable.".to_string()
    } else {
        format!("You also need to control the following control variables: {}.", task.controls.join(", "))
    };
    let mut out = format!(
        "Please use the {method} method to compute the effect of {} on {}. {controls}\n\n",
        task.treatment, task.outcome
    );
    let requirements = task.requirements.trim();
    if !requirements.is_empty() {
        out.push_str(&format!("Besides, you need to consider the following requirements: {requirements}\n\n"));
    }
    out.push_str(&format!("You could load the corresponding data from {}.\n\n", task.data_path));
    out.push_str(JSON_SENTENCE);
    out
}

pub fn parse_corpus(text: &str) -> Result<Vec<TaskSpec>, EvalError> {
    let tasks: Vec<TaskSpec> = serde_json::from_str(text).map_err(|e| EvalError::Corpus(e.to_string()))?;
    let mut ids = std::collections::BTreeSet::new();
    for t in &tasks {
        t.validate()?;
        if !ids.insert(t.id.as_str()) {
            return Err(EvalError::Corpus(format!("duplicate task id '{}'", t.id)));
        }
    }
    Ok(tasks)
}

/// Reads a JSON array of task specs.
pub fn load_corpus(path: &Path) -> Result<Vec<TaskSpec>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    parse_corpus(&text)
}
