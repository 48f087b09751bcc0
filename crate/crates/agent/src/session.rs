use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use econ_core::causal::LagIndexing;
use econ_core::chat::{last_json_object, ChatBackend, ChatMessage, Reply, Role, ToolSchema};
use econ_core::tools::{OutcomeStatus, Registry, ToolContext, ToolOutcome, DEFAULT_TABLE};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backend::BackendConfig;
use crate::error::AgentError;
use crate::events::{excerpt, EventKind, StepEvent};
use crate::plan::{
    build_plan, execution_order, parse_plan_reply, Action, Plan, PlanTemplates, StepStatus, SubTask,
    TemplateStep,
};
use crate::prompts;
use crate::report::{build_report, export_result_json, FailureSummary, FinalReport, RunOutcome};
use crate::request::{detect_family, mentions_data_path, parse_request};

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub max_retries: u32,
    pub backend: BackendConfig,
    pub lag_indexing: LagIndexing,
    /// Relative data paths resolve against this directory.
    pub data_dir: PathBuf,
    /// Where the reporting step writes the result JSON, if anywhere.
    pub output_path: Option<PathBuf>,
    /// Ask the backend to score tools instead of using lexical overlap.
    pub rank_with_model: bool,
    /// Directory of `<family>.json` plan templates overriding the built-in ones.
    pub template_dir: Option<PathBuf>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backend: BackendConfig::Rules,
            lag_indexing: LagIndexing::ZeroBased,
            data_dir: PathBuf::from("."),
            output_path: None,
            rank_with_model: false,
            template_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Idle,
    Running,
    AwaitingUser,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    ContinueRefine,
    NewTask,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryEntry {
    pub role: Role,
    pub content: String,
    pub step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Artifact {
    pub name: String,
    pub content: String,
    pub media_type: String,
}

#[derive(Debug, Clone)]
pub struct Memory {
    pub context: ToolContext,
    pub plan: Option<Plan>,
    pub history: Vec<HistoryEntry>,
    pub artifacts: Vec<Artifact>,
    pub config: SessionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FollowupResult {
    pub intent: Intent,
    /// Steps that ran again (or for the first time) for this message.
    pub rerun: Vec<usize>,
    pub outcome: RunOutcome,
}

pub type EventSink = Arc<dyn Fn(&StepEvent) + Send + Sync>;

enum Proposal {
    Call { tool: String, args: Value },
    Skip(String),
}

pub struct Session {
    pub id: String,
    pub status: SessionStatus,
    pub memory: Memory,
    backend: Arc<dyn ChatBackend>,
    registry: Registry,
    templates: PlanTemplates,
    request: Option<String>,
    followups: Vec<String>,
    last_report: Option<FinalReport>,
    events: Vec<StepEvent>,
    sink: Option<EventSink>,
}

const DATA_WORDS: &[&str] = &[
    "construct", "create", "generate", "recode", "filter", "drop", "subset", "median", "split",
    "logarithm", "dummy", "categorical", "exclude", "restrict", "keep only", "group",
];

/// A fresh session with empty memory.
pub fn create_session(config: SessionConfig) -> Result<Session, AgentError> {
    let backend = config.backend.resolve()?;
    let templates = match &config.template_dir {
        Some(dir) => PlanTemplates::with_overrides(dir)?,
        None => PlanTemplates::builtin(),
    };
    if config.max_retries == 0 {
        return Err(AgentError::Config("max_retries must be at least 1".into()));
    }
    Ok(Session {
        id: format!("s-{}", uuid::Uuid::new_v4().simple()),
        status: SessionStatus::Idle,
        memory: Memory {
            context: ToolContext::new(config.data_dir.clone()),
            plan: None,
            history: Vec::new(),
            artifacts: Vec::new(),
            config,
        },
        backend,
        registry: Registry::builtin(),
        templates,
        request: None,
        followups: Vec::new(),
        last_report: None,
        events: Vec::new(),
        sink: None,
    })
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn reply_text(reply: &Reply) -> String {
    match reply {
        Reply::Text(t) => t.clone(),
        Reply::ToolCall { name, args } => json!({"tool_call": {"name": name, "args": args}}).to_string(),
    }
}

fn parse_proposal(reply: &Reply, default_tool: &str) -> Result<Proposal, String> {
    match reply {
        Reply::ToolCall { name, args } => Ok(Proposal::Call { tool: name.clone(), args: args.clone() }),
        Reply::Text(text) => {
            let obj = last_json_object(text).ok_or("reply contains neither a tool call nor a JSON object")?;
            if let Some(reason) = obj.get("skip") {
                let reason = reason.as_str().map_or_else(|| reason.to_string(), str::to_string);
                return Ok(Proposal::Skip(reason));
            }
            if let Some(name) = obj.get("name").and_then(Value::as_str) {
                if let Some(args) = obj.get("arguments").or_else(|| obj.get("args")) {
                    let args = match args {
                        Value::String(s) => serde_json::from_str(s)
                            .map_err(|e| format!("arguments string is not JSON: {e}"))?,
                        other => other.clone(),
                    };
                    return Ok(Proposal::Call { tool: name.to_string(), args });
                }
            }
            Ok(Proposal::Call { tool: default_tool.to_string(), args: obj })
        }
    }
}

/// Argument names that would hold out part of the sample.
fn splits_sample(args: &Value) -> Option<String> {
    let obj = args.as_object()?;
    obj.keys()
        .find(|k| {
            let k = k.to_lowercase();
            ["train", "test", "holdout", "sample_split"].iter().any(|w| k.contains(w))
        })
        .cloned()
}

fn synthetic_outcome(tool: &str, result: Value, args: Value) -> ToolOutcome {
    ToolOutcome {
        tool: tool.into(),
        status: OutcomeStatus::Ok,
        result: Some(result),
        error_message: None,
        elapsed_ms: 0,
        echo_args: args,
        table: None,
    }
}

impl Session {
    pub fn backend_identity(&self) -> String {
        self.backend.identity()
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn plan(&self) -> Option<&Plan> {
        self.memory.plan.as_ref()
    }

    pub fn events(&self) -> &[StepEvent] {
        &self.events
    }

    pub fn last_report(&self) -> Option<&FinalReport> {
        self.last_report.as_ref()
    }

    /// Called synchronously for every event as it is recorded.
    pub fn set_event_sink(&mut self, sink: EventSink) {
        self.sink = Some(sink);
    }

    /// Makes `table` available to tools under `name`.
    pub fn insert_table(&mut self, name: &str, table: econ_core::data::DataTable) {
        self.memory.context.tables.insert(name.to_string(), table);
    }

    fn emit(&mut self, subtask_id: Option<usize>, kind: EventKind, payload: Value) {
        let event = StepEvent {
            session_id: self.id.clone(),
            seq: self.events.len() as u64 + 1,
            subtask_id,
            kind,
            timestamp_ms: now_ms(),
            payload,
        };
        if let Some(sink) = &self.sink {
            sink(&event);
        }
        self.events.push(event);
    }

    fn record(&mut self, role: Role, content: impl Into<String>, step: Option<usize>) {
        self.memory.history.push(HistoryEntry { role, content: content.into(), step });
    }

    fn plan_payload(&self) -> Value {
        let Some(plan) = &self.memory.plan else { return Value::Null };
        let steps: Vec<Value> = plan
            .subtasks
            .iter()
            .map(|s| {
                json!({
                    "id": s.id,
                    "description": s.description,
                    "action": s.action,
                    "econometric_tag": s.econometric_tag,
                    "depends_on": s.depends_on,
                    "status": s.status,
                    "attempts": s.attempts,
                    "selected_tool": s.selected_tool,
                })
            })
            .collect();
        json!({"template_name": plan.template_name, "steps": steps, "notes": plan.notes})
    }

    fn current_request(&self) -> String {
        self.request.clone().unwrap_or_default()
    }

    /// Request text with the follow-up instructions appended.
    fn full_request(&self) -> String {
        let mut text = self.current_request();
        for f in &self.followups {
            text.push('\n');
            text.push_str(f);
        }
        text
    }

    /// Plans `user_request`: the backend sees the request, every tool summary
    /// and the matching family template. An unusable reply is retried once
    /// with the error appended; after that the template itself is the plan.
    pub fn generate_plan(&mut self, user_request: &str) -> Result<Plan, AgentError> {
        if self.status == SessionStatus::Running && self.request.as_deref() != Some(user_request) {
            return Err(AgentError::Busy);
        }
        let facts = parse_request(user_request);
        let family = detect_family(user_request);
        let template = self.templates.get(family).clone();
        let steps = template.instantiate(&facts);
        let template_json = serde_json::to_string_pretty(&json!({"steps": steps})).unwrap_or_default();
        let mut messages = vec![
            ChatMessage::system(prompts::PLANNER_SYSTEM),
            ChatMessage::user(prompts::plan_prompt(
                user_request,
                family.as_str(),
                &template_json,
                &prompts::tool_listing(&self.registry),
            )),
        ];
        let mut problems = Vec::new();
        let mut plan = None;
        for _ in 0..2 {
            let reply = self.backend.complete(&messages, None);
            let text = match &reply {
                Ok(r) => reply_text(r),
                Err(e) => format!("backend error: {e}"),
            };
            self.record(Role::Assistant, text.clone(), None);
            let parsed = match &reply {
                Ok(Reply::Text(t)) => parse_plan_reply(t)
                    .and_then(|steps| build_plan(steps, family.as_str(), user_request)),
                Ok(Reply::ToolCall { .. }) => Err("expected a plan, got a tool call".into()),
                Err(e) => Err(e.to_string()),
            };
            match parsed {
                Ok(p) => {
                    plan = Some(p);
                    break;
                }
                Err(problem) => {
                    messages.push(ChatMessage::assistant(text));
                    messages.push(ChatMessage::user(format!(
                        "The plan could not be used: {problem}. Reply again with the JSON object only."
                    )));
                    problems.push(problem);
                }
            }
        }
        let plan = match plan {
            Some(p) => p,
            None => {
                let mut p = build_plan(steps, family.as_str(), user_request)
                    .map_err(|e| AgentError::Config(format!("template '{}' is invalid: {e}", family.as_str())))?;
                p.notes.push(format!(
                    "PlanParseWarning: model plan rejected ({}); using the {} template",
                    problems.join("; "),
                    family.as_str()
                ));
                p
            }
        };
        self.memory.plan = Some(plan.clone());
        let payload = self.plan_payload();
        self.emit(None, EventKind::PlanUpdated, payload);
        Ok(plan)
    }

    fn step_clone(&self, id: usize) -> Result<SubTask, AgentError> {
        let plan = self.memory.plan.as_ref().ok_or(AgentError::NoPlan)?;
        plan.step(id).cloned().ok_or(AgentError::UnknownStep(id))
    }

    fn update_step(&mut self, id: usize, f: impl FnOnce(&mut SubTask)) {
        if let Some(s) = self.memory.plan.as_mut().and_then(|p| p.step_mut(id)) {
            f(s);
        }
    }

    fn candidates(&self, action: Action) -> Vec<String> {
        let names = self.registry.list_tools();
        match action {
            Action::DataPreprocessing => {
                let data: Vec<String> = econ_core::tools::data_tools()
                    .into_iter()
                    .map(|t| t.descriptor.name)
                    .filter(|n| n != "load_csv" && n != "describe")
                    .collect();
                names.into_iter().filter(|n| data.contains(n)).collect()
            }
            _ => {
                let est: Vec<String> =
                    econ_core::tools::estimator_tools().into_iter().map(|t| t.descriptor.name).collect();
                names.into_iter().filter(|n| est.contains(n)).collect()
            }
        }
    }

    /// Candidate tools for a ranked step, best first.
    fn ranked_tools(&self, step: &SubTask) -> Vec<String> {
        let allowed = self.candidates(step.action);
        let query = match &step.econometric_tag {
            Some(tag) => format!("{} {tag}", step.description),
            None => step.description.clone(),
        };
        let backend: Option<&dyn ChatBackend> =
            if self.memory.config.rank_with_model { Some(self.backend.as_ref()) } else { None };
        econ_core::tools::rank_tools(&self.registry, &query, backend)
            .into_iter()
            .map(|(n, _)| n)
            .filter(|n| allowed.contains(n))
            .collect()
    }

    fn table_listing(&self) -> String {
        if self.memory.context.tables.is_empty() {
            return "(none)\n".into();
        }
        self.memory
            .context
            .tables
            .iter()
            .map(|(name, t)| format!("{name}: {}\n", t.schema_text()))
            .collect()
    }

    fn args_messages(&self, step: &SubTask, tool: &str, others: &[String]) -> Vec<ChatMessage> {
        let manual = self.registry.get(tool).map_or("", |t| t.descriptor.internal_prompt.as_str());
        vec![
            ChatMessage::system(prompts::ARGS_SYSTEM),
            ChatMessage::user(prompts::args_prompt(
                tool,
                step.id,
                &step.description,
                &prompts::request_block(&self.current_request(), &self.followups),
                &self.table_listing(),
                manual,
                others,
            )),
        ]
    }

    fn schemas(&self, tools: &[String]) -> Vec<ToolSchema> {
        tools
            .iter()
            .filter_map(|n| self.registry.get(n))
            .map(|t| t.descriptor.function_schema())
            .collect()
    }

    /// Ranks tools for a preprocessing, estimation or diagnostics step and
    /// asks the backend for arguments to the best one, sending validation
    /// errors back up to `max_retries` times.
    pub fn select_tool_for_step(&mut self, step_id: usize) -> Result<(String, Value), AgentError> {
        let step = self.step_clone(step_id)?;
        if !step.action.is_ranked() {
            return Err(AgentError::FixedRoute { step: step_id, action: step.action.to_string() });
        }
        let ranked = self.ranked_tools(&step);
        let top = ranked.first().cloned().unwrap_or_default();
        let schemas = self.schemas(&ranked);
        let mut messages = self.args_messages(&step, &top, &ranked[1.min(ranked.len())..]);
        let mut last_error = String::new();
        let max = self.memory.config.max_retries;
        for _ in 0..max {
            let (tool, result) = self.propose(&step, &top, &ranked, &messages, &schemas);
            match result {
                Ok(Proposal::Call { tool, args }) => {
                    let descriptor = self.registry.descriptor(&tool).map_err(|e| AgentError::Config(e.to_string()))?;
                    match econ_core::tools::validate_args(descriptor, &args) {
                        Ok(v) => return Ok((tool, v.to_value())),
                        Err(e) => last_error = e.to_string(),
                    }
                }
                Ok(Proposal::Skip(reason)) => return Ok(("skip".into(), json!({"reason": reason}))),
                Err(e) => last_error = e,
            }
            messages.push(ChatMessage::user(prompts::retry_prompt(&tool, &last_error)));
        }
        Err(AgentError::ArgsInvalidAfterRetries { step: step_id, attempts: max, last_error })
    }

    /// One backend round for arguments. Returns the tool the reply refers to
    /// (for the follow-up message) and the parsed proposal.
    fn propose(
        &mut self,
        step: &SubTask,
        top: &str,
        allowed: &[String],
        messages: &[ChatMessage],
        schemas: &[ToolSchema],
    ) -> (String, Result<Proposal, String>) {
        let reply = self.backend.complete(messages, Some(schemas));
        let reply = match reply {
            Ok(r) => r,
            Err(e) => {
                self.record(Role::Assistant, format!("backend error: {e}"), Some(step.id));
                return (top.to_string(), Err(format!("backend error: {e}")));
            }
        };
        self.record(Role::Assistant, reply_text(&reply), Some(step.id));
        match parse_proposal(&reply, top) {
            Ok(Proposal::Call { tool, .. }) if !allowed.contains(&tool) => {
                let msg = format!("tool '{tool}' is not available for this step; choose one of {}", allowed.join(", "));
                (tool, Err(msg))
            }
            Ok(Proposal::Skip(_)) if step.action == Action::Estimation => {
                (top.to_string(), Err("an estimation step cannot be skipped".into()))
            }
            Ok(Proposal::Call { tool, mut args }) => {
                if tool == "did_event_study" {
                    if let Some(obj) = args.as_object_mut().filter(|o| !o.contains_key("lag_indexing")) {
                        let flag = match self.memory.config.lag_indexing {
                            econ_core::causal::LagIndexing::ZeroBased => "zero_based",
                            econ_core::causal::LagIndexing::OneBased => "one_based",
                        };
                        obj.insert("lag_indexing".into(), flag.into());
                    }
                }
                if step.action == Action::Estimation {
                    if let Some(key) = splits_sample(&args) {
                        return (tool, Err(format!("argument '{key}' would split the sample; estimation uses the full table")));
                    }
                }
                (tool.clone(), Ok(Proposal::Call { tool, args }))
            }
            other => (top.to_string(), other),
        }
    }

    fn resolve_data_path(&self) -> Result<(String, Vec<String>), String> {
        let facts = parse_request(&self.full_request());
        let raw = facts.data_path.ok_or("the request names no data file")?;
        let mut notes = Vec::new();
        let path = Path::new(&raw);
        let absolute = if path.is_absolute() { path.to_path_buf() } else { self.memory.context.data_dir.join(path) };
        let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if !is_csv {
            let sibling = absolute.with_extension("csv");
            if sibling.exists() {
                notes.push(format!("reading {} in place of {raw}", sibling.display()));
                return Ok((sibling.display().to_string(), notes));
            }
        }
        Ok((raw, notes))
    }

    /// Loading and exploration run fixed built-in tools without the backend.
    fn fixed_call(&self, step: &SubTask) -> Result<(String, Value, Vec<String>), String> {
        match step.action {
            Action::DataLoading => {
                let (path, notes) = self.resolve_data_path()?;
                Ok(("load_csv".into(), json!({"path": path, "name": DEFAULT_TABLE}), notes))
            }
            Action::ExploratoryAnalysis => Ok(("describe".into(), json!({"data": DEFAULT_TABLE}), vec![])),
            _ => Err(format!("no fixed route for {}", step.action)),
        }
    }

    fn finish_ok(&mut self, id: usize, mut outcome: ToolOutcome) {
        if let Some((name, table)) = outcome.table.take() {
            self.memory.context.tables.insert(name, table);
        }
        let tool = outcome.tool.clone();
        let echo = outcome.echo_args.clone();
        self.update_step(id, |s| {
            s.status = StepStatus::Done;
            s.selected_tool = Some(tool.clone());
            s.args = Some(echo);
            s.outcome = Some(outcome);
        });
        let attempts = self.step_clone(id).map_or(0, |s| s.attempts);
        self.emit(Some(id), EventKind::StepDone, json!({"tool": tool, "attempts": attempts}));
    }

    fn finish_failed(&mut self, id: usize, errors: Vec<String>) {
        let payload = json!({"errors": errors});
        self.update_step(id, |s| {
            s.status = StepStatus::Failed;
            s.errors = errors;
        });
        self.emit(Some(id), EventKind::StepFailed, payload);
    }

    fn archive(&mut self, outcome: &ToolOutcome, step: usize) {
        let content = serde_json::to_string(outcome).unwrap_or_default();
        self.record(Role::Tool, content, Some(step));
    }

    /// Runs one step. Tool errors go back to the backend for corrected
    /// arguments, up to `max_retries` attempts; the final status is done or
    /// failed and every attempt's outcome is archived in the history.
    pub fn execute_step(&mut self, step_id: usize) -> Result<SubTask, AgentError> {
        let step = self.step_clone(step_id)?;
        let plan = self.memory.plan.as_ref().ok_or(AgentError::NoPlan)?;
        let blocked: Vec<usize> = step
            .depends_on
            .iter()
            .copied()
            .filter(|d| {
                plan.step(*d).is_none_or(|s| {
                    !(s.status == StepStatus::Done || (s.status == StepStatus::Failed && s.action.is_optional()))
                })
            })
            .collect();
        self.update_step(step_id, |s| {
            s.reset();
            s.status = StepStatus::Running;
        });
        self.emit(
            Some(step_id),
            EventKind::StepStarted,
            json!({"description": step.description, "action": step.action}),
        );
        if !blocked.is_empty() {
            let list: Vec<String> = blocked.iter().map(|d| d.to_string()).collect();
            self.finish_failed(step_id, vec![format!("dependencies not done: {}", list.join(", "))]);
            return self.step_clone(step_id);
        }
        match step.action {
            Action::Reporting => self.run_reporting(&step),
            Action::DataLoading | Action::ExploratoryAnalysis => self.run_fixed(&step),
            _ => self.run_ranked(&step),
        }
        self.step_clone(step_id)
    }

    fn run_fixed(&mut self, step: &SubTask) {
        self.update_step(step.id, |s| s.attempts = 1);
        if step.action == Action::DataLoading
            && self.memory.context.tables.contains_key(DEFAULT_TABLE)
            && parse_request(&self.full_request()).data_path.is_none()
        {
            let outcome = synthetic_outcome("load_csv", json!({"note": "table already loaded"}), json!({}));
            self.finish_ok(step.id, outcome);
            return;
        }
        match self.fixed_call(step) {
            Ok((tool, args, notes)) => {
                let mut outcome = self.registry.invoke_tool(&tool, &args, &self.memory.context);
                if !notes.is_empty() {
                    if let Some(r) = outcome.result.as_mut().and_then(Value::as_object_mut) {
                        r.insert("path_notes".into(), json!(notes));
                    }
                }
                self.archive(&outcome, step.id);
                if outcome.is_ok() {
                    self.finish_ok(step.id, outcome);
                } else {
                    let err = outcome.error_message.clone().unwrap_or_default();
                    self.update_step(step.id, |s| {
                        s.selected_tool = Some(tool);
                        s.outcome = Some(outcome);
                    });
                    self.finish_failed(step.id, vec![err]);
                }
            }
            Err(e) => self.finish_failed(step.id, vec![e]),
        }
    }

    fn run_ranked(&mut self, step: &SubTask) {
        let ranked = self.ranked_tools(step);
        let Some(top) = ranked.first().cloned() else {
            self.finish_failed(step.id, vec!["no tool is registered for this step".into()]);
            return;
        };
        let schemas = self.schemas(&ranked);
        let mut messages = self.args_messages(step, &top, &ranked[1..]);
        let mut errors = Vec::new();
        let max = self.memory.config.max_retries;
        for attempt in 1..=max {
            self.update_step(step.id, |s| s.attempts = attempt);
            let (tool, proposal) = self.propose(step, &top, &ranked, &messages, &schemas);
            let error = match proposal {
                Ok(Proposal::Skip(reason)) => {
                    let outcome = synthetic_outcome("skip", json!({"skipped": reason}), json!({}));
                    self.archive(&outcome, step.id);
                    self.finish_ok(step.id, outcome);
                    return;
                }
                Ok(Proposal::Call { tool, args }) => {
                    let outcome = self.registry.invoke_tool(&tool, &args, &self.memory.context);
                    self.archive(&outcome, step.id);
                    if outcome.is_ok() {
                        self.finish_ok(step.id, outcome);
                        return;
                    }
                    let err = outcome.error_message.clone().unwrap_or_default();
                    self.update_step(step.id, |s| {
                        s.selected_tool = Some(tool.clone());
                        s.args = Some(args.clone());
                        s.outcome = Some(outcome);
                    });
                    err
                }
                Err(e) => e,
            };
            errors.push(error.clone());
            if attempt < max {
                self.emit(
                    Some(step.id),
                    EventKind::StepRetrying { attempt, error_excerpt: excerpt(&error) },
                    json!({"tool": tool}),
                );
                messages.push(ChatMessage::user(prompts::retry_prompt(&tool, &error)));
            }
        }
        self.finish_failed(step.id, errors);
    }

    /// The estimation step the reporting step draws from.
    fn report_source(&self, step: &SubTask) -> Option<SubTask> {
        let plan = self.memory.plan.as_ref()?;
        let done_estimation = |s: &&SubTask| s.action == Action::Estimation && s.status == StepStatus::Done;
        step.depends_on
            .iter()
            .rev()
            .filter_map(|d| plan.step(*d))
            .find(done_estimation)
            .or_else(|| plan.subtasks.iter().rev().find(done_estimation))
            .cloned()
    }

    fn run_reporting(&mut self, step: &SubTask) {
        self.update_step(step.id, |s| s.attempts = 1);
        let Some(source) = self.report_source(step) else {
            self.finish_failed(step.id, vec!["no completed estimation step to report".into()]);
            return;
        };
        let outcome = source.outcome.clone().unwrap_or_else(|| synthetic_outcome("none", Value::Null, Value::Null));
        let args = source.args.clone().unwrap_or(Value::Null);
        let result = outcome.result.clone().unwrap_or(Value::Null);
        let report = match build_report(&outcome.tool, &args, &result) {
            Ok(r) => r,
            Err(e) => {
                self.finish_failed(step.id, vec![e]);
                return;
            }
        };
        if let Some(path) = self.memory.config.output_path.clone() {
            if let Err(e) = export_result_json(&report, &path) {
                self.finish_failed(step.id, vec![e.to_string()]);
                return;
            }
        }
        self.memory.artifacts.push(Artifact {
            name: "result.json".into(),
            content: report.json_text.clone(),
            media_type: "application/json".into(),
        });
        let summary = json!({
            "coefficient": report.coefficient,
            "standard_error": report.standard_error,
            "p-value": report.p_value,
            "method": report.method,
            "term": report.term,
            "source_step": source.id,
            "warnings": report.warnings,
        });
        self.record(Role::Tool, report.json_text.clone(), Some(step.id));
        self.finish_ok(step.id, synthetic_outcome("report", summary.clone(), json!({"source_step": source.id})));
        let payload = json!({"json_text": report.json_text, "report": summary});
        self.last_report = Some(report);
        self.emit(Some(step.id), EventKind::FinalReport, payload);
    }

    /// Executes every pending step in dependency order; stops at the first
    /// failed step that is not optional.
    fn run_pending(&mut self) -> Result<RunOutcome, AgentError> {
        let plan = self.memory.plan.as_ref().ok_or(AgentError::NoPlan)?;
        for id in execution_order(plan) {
            if self.step_clone(id)?.status == StepStatus::Done {
                continue;
            }
            let step = self.execute_step(id)?;
            if step.status == StepStatus::Failed && !step.action.is_optional() {
                return Ok(RunOutcome::Failure(FailureSummary {
                    step_id: step.id,
                    description: step.description.clone(),
                    tool: step.selected_tool.clone(),
                    errors: step.errors.clone(),
                }));
            }
        }
        match &self.last_report {
            Some(r) => Ok(RunOutcome::Report(r.clone())),
            None => {
                let plan = self.memory.plan.as_ref().ok_or(AgentError::NoPlan)?;
                let last = plan.subtasks.last().ok_or(AgentError::NoPlan)?;
                Ok(RunOutcome::Failure(FailureSummary {
                    step_id: last.id,
                    description: last.description.clone(),
                    tool: None,
                    errors: vec!["run finished without a report".into()],
                }))
            }
        }
    }

    /// Plans and executes `user_request` end to end.
    pub fn run_request(&mut self, user_request: &str) -> Result<RunOutcome, AgentError> {
        if self.status == SessionStatus::Running {
            return Err(AgentError::Busy);
        }
        self.status = SessionStatus::Running;
        self.request = Some(user_request.to_string());
        self.followups.clear();
        self.last_report = None;
        self.record(Role::User, user_request, None);
        let result = self.generate_plan(user_request).and_then(|_| self.run_pending());
        self.status = SessionStatus::AwaitingUser;
        result
    }

    fn heuristic_intent(message: &str) -> Intent {
        let lower = message.to_lowercase();
        if lower.contains("new analysis") || lower.contains("new task") || mentions_data_path(message) {
            Intent::NewTask
        } else {
            Intent::ContinueRefine
        }
    }

    /// Whether `message` refines the ongoing analysis or starts a new one.
    pub fn classify_intent(&mut self, message: &str) -> Intent {
        if self.memory.plan.is_none() {
            return Intent::NewTask;
        }
        let messages = [
            ChatMessage::system(prompts::CLASSIFY_SYSTEM),
            ChatMessage::user(prompts::classify_prompt(&self.current_request(), message)),
        ];
        let label = match self.backend.complete(&messages, None) {
            Ok(Reply::Text(t)) => {
                self.record(Role::Assistant, t.clone(), None);
                let t = t.to_lowercase();
                match (t.contains("continue_refine"), t.contains("new_task")) {
                    (true, false) => Some(Intent::ContinueRefine),
                    (false, true) => Some(Intent::NewTask),
                    _ => None,
                }
            }
            _ => None,
        };
        label.unwrap_or_else(|| Self::heuristic_intent(message))
    }

    fn plan_listing(&self) -> String {
        self.memory.plan.as_ref().map_or_else(String::new, |p| {
            p.subtasks
                .iter()
                .map(|s| {
                    format!(
                        "{}. [{}] {} ({}; depends on {:?})\n",
                        s.id,
                        serde_json::to_value(s.status).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
                        s.description,
                        s.action,
                        s.depends_on
                    )
                })
                .collect()
        })
    }

    /// Steps to run again for a refinement, and steps to add.
    fn revision(&mut self, message: &str) -> (Vec<usize>, Vec<TemplateStep>) {
        let plan = self.memory.plan.clone().unwrap_or_else(|| Plan {
            subtasks: vec![],
            template_name: String::new(),
            created_from: String::new(),
            notes: vec![],
        });
        let messages = [
            ChatMessage::system(prompts::REVISE_SYSTEM),
            ChatMessage::user(prompts::revise_prompt(message, &self.plan_listing())),
        ];
        if let Ok(Reply::Text(t)) = self.backend.complete(&messages, None) {
            self.record(Role::Assistant, t.clone(), None);
            if let Some(obj) = last_json_object(&t) {
                let reset: Option<Vec<usize>> = obj.get("reset").and_then(|v| serde_json::from_value(v.clone()).ok());
                let add: Vec<TemplateStep> =
                    obj.get("add").and_then(|v| serde_json::from_value(v.clone()).ok()).unwrap_or_default();
                if let Some(reset) = reset {
                    if reset.iter().all(|id| plan.step(*id).is_some()) && (!reset.is_empty() || !add.is_empty()) {
                        return (reset, add);
                    }
                }
            }
        }
        let lower = message.to_lowercase();
        let data_change = DATA_WORDS.iter().any(|w| lower.contains(w));
        let reset = plan
            .subtasks
            .iter()
            .filter(|s| {
                matches!(s.action, Action::Estimation | Action::Diagnostics | Action::Reporting)
                    || (data_change && s.action == Action::DataPreprocessing)
            })
            .map(|s| s.id)
            .collect();
        (reset, Vec::new())
    }

    /// Applies a revision: resets the named steps and everything downstream,
    /// inserts added steps before the reporting step (which takes the next
    /// free id) and keeps every other id.
    fn apply_revision(&mut self, reset: &[usize], add: Vec<TemplateStep>) -> Vec<usize> {
        let Some(plan) = self.memory.plan.as_mut() else { return Vec::new() };
        let reporting = plan.subtasks.pop();
        let mut next_id = plan.subtasks.iter().map(|s| s.id).max().unwrap_or(0)
            + reporting.as_ref().map_or(0, |_| 1);
        let mut added = Vec::new();
        for t in add {
            if t.action == Action::Reporting {
                continue;
            }
            next_id += 1;
            let valid: Vec<usize> = t
                .depends_on
                .unwrap_or_default()
                .into_iter()
                .filter(|d| plan.step(*d).is_some())
                .collect();
            let deps = if valid.is_empty() {
                plan.subtasks.iter().rev().find(|s| s.action != Action::Reporting).map(|s| s.id).into_iter().collect()
            } else {
                valid
            };
            let mut s = SubTask::new(next_id, t.description, t.action, deps);
            s.econometric_tag = t.econometric_tag;
            plan.subtasks.push(s);
            added.push(next_id);
        }
        if let Some(mut r) = reporting {
            if !added.is_empty() {
                r.id = next_id + 1;
                for a in &added {
                    if plan.step(*a).is_some_and(|s| s.action == Action::Estimation) {
                        r.depends_on.push(*a);
                    }
                }
            }
            plan.subtasks.push(r);
        }
        let report_id = plan.subtasks.last().map(|s| s.id);
        let mut roots: Vec<usize> = reset.to_vec();
        roots.extend(report_id);
        let affected = plan.downstream(&roots);
        for s in plan.subtasks.iter_mut() {
            if affected.contains(&s.id) {
                s.reset();
            }
        }
        plan.subtasks.iter().filter(|s| s.status == StepStatus::Pending).map(|s| s.id).collect()
    }

    /// Routes a follow-up: a refinement re-runs only the affected steps; a
    /// new task clears tables and plan (history stays) and runs from scratch.
    pub fn handle_followup(&mut self, message: &str) -> Result<FollowupResult, AgentError> {
        if self.status == SessionStatus::Running {
            return Err(AgentError::Busy);
        }
        self.record(Role::User, message, None);
        let intent = self.classify_intent(message);
        match intent {
            Intent::NewTask => {
                self.memory.context.tables.clear();
                self.memory.plan = None;
                let outcome = self.run_request(message)?;
                let rerun = self.memory.plan.as_ref().map_or_else(Vec::new, |p| p.subtasks.iter().map(|s| s.id).collect());
                Ok(FollowupResult { intent, rerun, outcome })
            }
            Intent::ContinueRefine => {
                self.status = SessionStatus::Running;
                self.followups.push(message.to_string());
                self.last_report = None;
                let (reset, add) = self.revision(message);
                let rerun = self.apply_revision(&reset, add);
                let payload = self.plan_payload();
                self.emit(None, EventKind::PlanUpdated, payload);
                let outcome = self.run_pending();
                self.status = SessionStatus::AwaitingUser;
                Ok(FollowupResult { intent, rerun, outcome: outcome? })
            }
        }
    }
}
