//! Deterministic offline backend. It reads the request out of the prompt
//! layout and answers each prompt kind by rule: the family template as the
//! plan, request-derived arguments for tools, keyword labels for follow-ups.

use std::sync::LazyLock;

use econ_core::chat::{BackendError, ChatBackend, ChatMessage, Reply, ToolSchema};
use regex::Regex;
use serde_json::{json, Map, Value};

use crate::prompts::{
    CLASSIFY_MARKER, FOLLOWUP_MARKER, MESSAGE_MARKER, PLAN_MARKER, REQUEST_MARKER, TEMPLATE_MARKER,
};
use crate::request::{detect_family, mentions_data_path, parse_request, Family, RequestFacts};

static TOOL_NAME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"arguments for tool `([^`]+)`").expect("valid pattern"));
static STEP_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"for step \d+: ([^\n]*)").expect("valid pattern"));

const DEFAULT_BOOTSTRAP_REPS: i64 = 100;
const DEFAULT_SEED: i64 = 42;

#[derive(Debug, Default, Clone, Copy)]
pub struct RuleBackend;

fn between<'a>(text: &'a str, start: &str, ends: &[&str]) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let rest = &text[from..];
    let stop = ends.iter().filter_map(|e| rest.find(e)).min().unwrap_or(rest.len());
    Some(rest[..stop].trim())
}

/// Request text plus follow-up instructions from an argument prompt.
fn request_text(prompt: &str) -> String {
    let mut text = between(prompt, REQUEST_MARKER, &[FOLLOWUP_MARKER, "\nLoaded tables:"])
        .unwrap_or_default()
        .to_string();
    if let Some(block) = between(prompt, FOLLOWUP_MARKER, &["\nLoaded tables:"]) {
        for line in block.lines() {
            text.push('\n');
            text.push_str(line.trim_start_matches("- "));
        }
    }
    text
}

/// Column names of every table in an argument prompt's listing.
fn listed_columns(prompt: &str) -> Vec<String> {
    let Some(block) = between(prompt, "Loaded tables:\n", &["\nTool manual:"]) else {
        return Vec::new();
    };
    block
        .lines()
        .filter_map(|l| l.rsplit_once("]: ").map(|(_, cols)| cols))
        .flat_map(|cols| cols.split(", "))
        .filter_map(|c| c.split(" (").next())
        .map(str::to_string)
        .collect()
}

fn vcov_args(f: &RequestFacts, args: &mut Map<String, Value>) {
    if let Some(c) = &f.cluster {
        args.insert("vcov".into(), "cluster".into());
        args.insert("cluster".into(), c.clone().into());
    } else if f.robust {
        args.insert("vcov".into(), "robust".into());
    }
}

fn treatment_regressors(f: &RequestFacts) -> Vec<String> {
    let mut regs: Vec<String> = f.treatment.iter().cloned().collect();
    regs.extend(f.controls.iter().filter(|c| Some(*c) != f.treatment.as_ref()).cloned());
    regs
}

fn estimation_call(f: &RequestFacts, family: Family, columns: &[String]) -> (String, Map<String, Value>) {
    let method = f.method.clone().unwrap_or_default().to_lowercase();
    let mut a = Map::new();
    let outcome = f.outcome.clone().unwrap_or_default();
    let treatment = f.treatment.clone().unwrap_or_default();
    a.insert("outcome".into(), outcome.into());
    let tool = match family {
        Family::Propensity => {
            a.insert("treatment".into(), treatment.into());
            a.insert("covariates".into(), json!(f.controls));
            if !f.categorical.is_empty() {
                a.insert("categorical".into(), json!(f.categorical));
            }
            if method.contains("matching") {
                a.insert("estimand".into(), if f.atet { "ATET" } else { "ATE" }.into());
                a.insert("bootstrap_reps".into(), f.bootstrap_reps.unwrap_or(DEFAULT_BOOTSTRAP_REPS).into());
                a.insert("seed".into(), DEFAULT_SEED.into());
                "ps_matching"
            } else {
                if let Some(t) = &f.trim {
                    a.insert("trim_mode".into(), t.mode.into());
                    a.insert("trim_lower".into(), t.lower.into());
                    a.insert("trim_upper".into(), t.upper.into());
                }
                vcov_args(f, &mut a);
                "ps_regression_adjustment"
            }
        }
        Family::Iv => {
            a.insert("endogenous".into(), json!([treatment]));
            a.insert("instruments".into(), json!(f.instruments));
            if !f.controls.is_empty() {
                a.insert("exogenous".into(), json!(f.controls));
            }
            vcov_args(f, &mut a);
            "iv_2sls"
        }
        Family::Did => {
            let unit = f.unit.clone().or_else(|| f.fixed_effects.first().cloned()).unwrap_or_default();
            let time = f.time.clone().or_else(|| f.fixed_effects.get(1).cloned()).unwrap_or_default();
            a.insert("unit".into(), unit.into());
            a.insert("time".into(), time.into());
            if !f.controls.is_empty() {
                a.insert("controls".into(), json!(f.controls));
            }
            vcov_args(f, &mut a);
            if f.see_back.is_some() || f.see_forward.is_some() || method.contains("event") {
                let adoption = f.adoption.clone().or_else(|| {
                    columns
                        .iter()
                        .find(|c| {
                            let c = c.to_lowercase();
                            c.contains("adopt") || c.contains("first_treat") || c == format!("{}_year", treatment.to_lowercase())
                        })
                        .cloned()
                });
                a.insert("adoption_time".into(), adoption.unwrap_or(treatment).into());
                a.insert("see_back".into(), f.see_back.unwrap_or(4).into());
                a.insert("see_forward".into(), f.see_forward.unwrap_or(4).into());
                if let Some(term) = &f.report_term {
                    a.insert("report_term".into(), term.clone().into());
                }
                "did_event_study"
            } else {
                a.insert("treatment".into(), treatment.into());
                "did_static"
            }
        }
        Family::Rdd => {
            a.insert("running".into(), f.running.clone().unwrap_or_default().into());
            a.insert("cutoff".into(), f.cutoff.unwrap_or(0.0).into());
            if let Some(h) = f.bandwidth {
                a.insert("bandwidth".into(), h.into());
            }
            if method.contains("fuzzy") {
                a.insert("treatment".into(), treatment.into());
                "rdd_fuzzy"
            } else {
                "rdd_sharp"
            }
        }
        Family::Regression => {
            a.insert("regressors".into(), json!(treatment_regressors(f)));
            if let Some(term) = &f.report_term {
                a.insert("report_term".into(), term.clone().into());
            }
            if method.contains("logit") || method.contains("logistic") {
                "logit_fit"
            } else if !f.fixed_effects.is_empty() {
                a.insert("fixed_effects".into(), json!(f.fixed_effects));
                vcov_args(f, &mut a);
                "panel_ols"
            } else {
                vcov_args(f, &mut a);
                "ols"
            }
        }
    };
    (tool.to_string(), a)
}

fn args_reply(prompt: &str) -> Result<Reply, BackendError> {
    let first = TOOL_NAME
        .captures(prompt)
        .map(|c| c[1].to_string())
        .ok_or_else(|| BackendError("argument prompt names no tool".into()))?;
    let description = STEP_LINE.captures(prompt).map(|c| c[1].to_lowercase()).unwrap_or_default();
    let request = request_text(prompt);
    let facts = parse_request(&request);
    let estimating = ["estimat", "apply", "effect"].iter().any(|w| description.contains(w));
    if description.contains("preprocess") || !estimating {
        return Ok(match &facts.log_derive {
            Some((new, source)) if description.contains("preprocess") => Reply::ToolCall {
                name: "derive_column".into(),
                args: json!({"new_column": new, "transform": "log", "sources": [source]}),
            },
            _ => Reply::Text(json!({"skip": "no transformation needed for this step"}).to_string()),
        });
    }
    let (tool, args) = estimation_call(&facts, detect_family(&request), &listed_columns(prompt));
    let name = if tool.is_empty() { first } else { tool };
    Ok(Reply::ToolCall { name, args: Value::Object(args) })
}

fn classify_reply(prompt: &str) -> Reply {
    let message = between(prompt, MESSAGE_MARKER, &[]).unwrap_or_default();
    let lower = message.to_lowercase();
    let new_task = lower.contains("new analysis") || lower.contains("new task") || mentions_data_path(message);
    Reply::Text(if new_task { "new_task" } else { "continue_refine" }.into())
}

impl ChatBackend for RuleBackend {
    fn identity(&self) -> String {
        "rules".into()
    }

    fn complete(&self, messages: &[ChatMessage], _tools: Option<&[ToolSchema]>) -> Result<Reply, BackendError> {
        let prompt = messages
            .iter()
            .rev()
            .map(|m| m.content.as_str())
            .find(|c| c.contains(PLAN_MARKER) || c.contains(CLASSIFY_MARKER) || TOOL_NAME.is_match(c) && c.contains(REQUEST_MARKER))
            .ok_or_else(|| BackendError("rules backend does not handle this prompt".into()))?;
        if prompt.contains(PLAN_MARKER) {
            let template = between(prompt, TEMPLATE_MARKER, &["\n\nAvailable tools:"])
                .ok_or_else(|| BackendError("plan prompt has no template".into()))?;
            return Ok(Reply::Text(template.to_string()));
        }
        if prompt.contains(CLASSIFY_MARKER) {
            return Ok(classify_reply(prompt));
        }
        args_reply(prompt)
    }
}
