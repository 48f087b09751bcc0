use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use econ_core::tools::ToolOutcome;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::AgentError;
use crate::request::{Family, RequestFacts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    DataLoading,
    DataPreprocessing,
    ExploratoryAnalysis,
    Estimation,
    Diagnostics,
    Reporting,
}

impl Action {
    /// Steps whose failure does not stop the run.
    pub fn is_optional(&self) -> bool {
        matches!(self, Action::ExploratoryAnalysis | Action::Diagnostics)
    }

    /// Steps routed through tool ranking and model-written arguments.
    pub fn is_ranked(&self) -> bool {
        matches!(self, Action::DataPreprocessing | Action::Estimation | Action::Diagnostics)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("action serializes");
        f.write_str(v.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubTask {
    pub id: usize,
    pub description: String,
    pub action: Action,
    pub econometric_tag: Option<String>,
    pub depends_on: Vec<usize>,
    pub status: StepStatus,
    pub selected_tool: Option<String>,
    pub args: Option<Value>,
    pub outcome: Option<ToolOutcome>,
    pub attempts: u32,
    /// Error messages of the failed attempts, oldest first.
    pub errors: Vec<String>,
}

impl SubTask {
    pub fn new(id: usize, description: impl Into<String>, action: Action, depends_on: Vec<usize>) -> Self {
        Self {
            id,
            description: description.into(),
            action,
            econometric_tag: None,
            depends_on,
            status: StepStatus::Pending,
            selected_tool: None,
            args: None,
            outcome: None,
            attempts: 0,
            errors: Vec::new(),
        }
    }

    /// Back to pending with the previous attempt cleared.
    pub fn reset(&mut self) {
        self.status = StepStatus::Pending;
        self.selected_tool = None;
        self.args = None;
        self.outcome = None;
        self.attempts = 0;
        self.errors.clear();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Plan {
    pub subtasks: Vec<SubTask>,
    pub template_name: String,
    pub created_from: String,
    pub notes: Vec<String>,
}

impl Plan {
    pub fn step(&self, id: usize) -> Option<&SubTask> {
        self.subtasks.iter().find(|s| s.id == id)
    }

    pub fn step_mut(&mut self, id: usize) -> Option<&mut SubTask> {
        self.subtasks.iter_mut().find(|s| s.id == id)
    }

    /// Steps other than the closing reporting step.
    pub fn analysis_steps(&self) -> impl Iterator<Item = &SubTask> {
        self.subtasks.iter().filter(|s| s.action != Action::Reporting)
    }

    pub fn statuses(&self) -> Vec<(usize, StepStatus)> {
        self.subtasks.iter().map(|s| (s.id, s.status)).collect()
    }

    /// Ids of `roots` and of every step depending on them, directly or not.
    pub fn downstream(&self, roots: &[usize]) -> Vec<usize> {
        let mut hit: Vec<usize> = roots.to_vec();
        for s in &self.subtasks {
            if !hit.contains(&s.id) && s.depends_on.iter().any(|d| hit.contains(d)) {
                hit.push(s.id);
            }
        }
        self.subtasks.iter().map(|s| s.id).filter(|id| hit.contains(id)).collect()
    }

    /// Checks the structural invariants: unique ids, dependencies on earlier
    /// steps only, exactly one reporting step and it comes last.
    pub fn validate(&self) -> Result<(), String> {
        if self.subtasks.is_empty() {
            return Err("plan has no steps".into());
        }
        let mut seen = Vec::new();
        for s in &self.subtasks {
            if seen.contains(&s.id) {
                return Err(format!("duplicate step id {}", s.id));
            }
            if let Some(d) = s.depends_on.iter().find(|d| !seen.contains(*d)) {
                return Err(format!("step {} depends on {d}, which is not an earlier step", s.id));
            }
            if s.description.trim().is_empty() {
                return Err(format!("step {} has no description", s.id));
            }
            seen.push(s.id);
        }
        let reporting = self.subtasks.iter().filter(|s| s.action == Action::Reporting).count();
        if reporting != 1 || self.subtasks.last().map(|s| s.action) != Some(Action::Reporting) {
            return Err("plan must end in exactly one reporting step".into());
        }
        Ok(())
    }
}

/// Step order respecting `depends_on`; among ready steps the earliest in
/// plan order runs first.
pub fn execution_order(plan: &Plan) -> Vec<usize> {
    let mut done: Vec<usize> = Vec::new();
    let mut order = Vec::new();
    while order.len() < plan.subtasks.len() {
        let next = plan.subtasks.iter().find(|s| {
            !order.contains(&s.id) && s.depends_on.iter().all(|d| done.contains(d))
        });
        match next {
            Some(s) => {
                order.push(s.id);
                done.push(s.id);
            }
            None => break,
        }
    }
    order
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateStep {
    pub description: String,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub econometric_tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depends_on: Option<Vec<usize>>,
}

/// A method family's standard research path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanTemplate {
    pub family: Family,
    pub default_method: String,
    pub steps: Vec<TemplateStep>,
}

impl PlanTemplate {
    /// Steps with `{method}`, `{treatment}`, `{outcome}` and `{data_path}` filled in.
    pub fn instantiate(&self, facts: &RequestFacts) -> Vec<TemplateStep> {
        let fill = |s: &str| {
            s.replace("{method}", facts.method.as_deref().unwrap_or(&self.default_method))
                .replace("{treatment}", facts.treatment.as_deref().unwrap_or("the treatment"))
                .replace("{outcome}", facts.outcome.as_deref().unwrap_or("the outcome"))
                .replace("{data_path}", facts.data_path.as_deref().unwrap_or("the specified file path"))
        };
        self.steps
            .iter()
            .map(|s| TemplateStep { description: fill(&s.description), ..s.clone() })
            .collect()
    }
}

/// One template per method family.
#[derive(Debug, Clone)]
pub struct PlanTemplates {
    templates: BTreeMap<Family, PlanTemplate>,
}

impl PlanTemplates {
    pub fn builtin() -> Self {
        let sources = [
            include_str!("../templates/regression.json"),
            include_str!("../templates/propensity.json"),
            include_str!("../templates/iv.json"),
            include_str!("../templates/did.json"),
            include_str!("../templates/rdd.json"),
        ];
        let templates = sources
            .iter()
            .map(|s| serde_json::from_str::<PlanTemplate>(s).expect("bundled template parses"))
            .map(|t| (t.family, t))
            .collect();
        Self { templates }
    }

    /// Built-in templates, overridden by any `<family>.json` found in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, AgentError> {
        let mut out = Self::builtin();
        for family in Family::ALL {
            let path = dir.join(format!("{}.json", family.as_str()));
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path)
                .map_err(|e| AgentError::Io(format!("{}: {e}", path.display())))?;
            let t: PlanTemplate = serde_json::from_str(&text)
                .map_err(|e| AgentError::Config(format!("{}: {e}", path.display())))?;
            if t.family != family {
                return Err(AgentError::Config(format!(
                    "{} declares family '{}'",
                    path.display(),
                    t.family.as_str()
                )));
            }
            out.templates.insert(family, t);
        }
        Ok(out)
    }

    pub fn get(&self, family: Family) -> &PlanTemplate {
        &self.templates[&family]
    }
}

/// Turns template-shaped steps into a validated plan. `depends_on` holds
/// 1-based positions and defaults to the previous step; a reporting step is
/// appended when missing.
pub fn build_plan(
    steps: Vec<TemplateStep>,
    template_name: &str,
    request: &str,
) -> Result<Plan, String> {
    if steps.is_empty() {
        return Err("plan has no steps".into());
    }
    let mut subtasks: Vec<SubTask> = Vec::new();
    for (i, s) in steps.into_iter().enumerate() {
        let id = i + 1;
        let deps = s.depends_on.unwrap_or_else(|| if id > 1 { vec![id - 1] } else { vec![] });
        let mut t = SubTask::new(id, s.description.trim(), s.action, deps);
        t.econometric_tag = s.econometric_tag.filter(|t| !t.trim().is_empty());
        subtasks.push(t);
    }
    if !subtasks.iter().any(|s| s.action == Action::Estimation) {
        return Err("plan has no estimation step".into());
    }
    if !subtasks.iter().any(|s| s.action == Action::Reporting) {
        let id = subtasks.len() + 1;
        let last_estimation =
            subtasks.iter().rev().find(|s| s.action == Action::Estimation).map(|s| s.id);
        subtasks.push(SubTask::new(
            id,
            "Report the coefficient, standard error and p-value of the effect",
            Action::Reporting,
            last_estimation.into_iter().collect(),
        ));
    }
    let plan = Plan {
        subtasks,
        template_name: template_name.to_string(),
        created_from: request.to_string(),
        notes: Vec::new(),
    };
    plan.validate()?;
    Ok(plan)
}

/// Reads a model's plan reply: a JSON object with a `steps` array, or a bare array.
pub fn parse_plan_reply(text: &str) -> Result<Vec<TemplateStep>, String> {
    let steps_value = econ_core::chat::json_objects(text)
        .into_iter()
        .rev()
        .find_map(|o| o.get("steps").cloned())
        .or_else(|| {
            let (start, end) = (text.find('[')?, text.rfind(']')?);
            serde_json::from_str::<Value>(text.get(start..=end)?).ok()
        })
        .ok_or("reply contains no `steps` array")?;
    serde_json::from_value(steps_value).map_err(|e| format!("malformed steps: {e}"))
}
