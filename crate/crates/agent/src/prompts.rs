//! Message layouts exchanged with the backend. The marker strings are stable
//! so recorded fixtures can key on them.

use econ_core::tools::Registry;

pub const PLAN_MARKER: &str = "Plan the analysis for this request:";
pub const TEMPLATE_MARKER: &str = "Template plan:";
pub const REQUEST_MARKER: &str = "Request:";
pub const FOLLOWUP_MARKER: &str = "Follow-up instructions:";
pub const CLASSIFY_MARKER: &str = "Classify the follow-up message";
pub const MESSAGE_MARKER: &str = "Follow-up message:";
pub const REVISE_MARKER: &str = "Revise the plan";

pub const PLANNER_SYSTEM: &str = "You are an econometrics research agent. Break the request into a short \
sequence of econometrically meaningful steps. Each step has a description, an action (one of data_loading, \
data_preprocessing, exploratory_analysis, estimation, diagnostics, reporting), an optional econometric_tag \
and depends_on, a list of 1-based positions of earlier steps. Reply with one JSON object \
{\"steps\": [...]}.";

pub const ARGS_SYSTEM: &str = "You are an econometrics research agent executing one step of a plan. Call \
the named tool with arguments that match its schema and the loaded tables. If a data_preprocessing or \
diagnostics step needs no tool, reply with {\"skip\": \"<reason>\"}.";

pub const CLASSIFY_SYSTEM: &str = "Decide whether a follow-up message refines the ongoing analysis or starts \
a new one. Reply with exactly one label: continue_refine or new_task.";

pub const REVISE_SYSTEM: &str = "You maintain an econometric analysis plan. Given a follow-up instruction, \
reply with one JSON object {\"reset\": [step ids to run again], \"add\": [new steps]}.";

/// One line per tool with its four-aspect summary.
pub fn tool_listing(registry: &Registry) -> String {
    registry
        .descriptors()
        .map(|d| match &d.summary {
            Some(s) => format!(
                "- {}: {} Input: {} Output: {} Notes: {}\n",
                d.name, s.target_scenario, s.input_requirements, s.output_structure, s.special_requirements
            ),
            None => format!("- {}\n", d.name),
        })
        .collect()
}

pub fn plan_prompt(request: &str, family: &str, template_json: &str, tools: &str) -> String {
    format!(
        "{PLAN_MARKER}\n{request}\n\nMethod family: {family}\n{TEMPLATE_MARKER}\n{template_json}\n\n\
         Available tools:\n{tools}"
    )
}

pub fn request_block(request: &str, followups: &[String]) -> String {
    let mut out = format!("{REQUEST_MARKER}\n{request}\n");
    if !followups.is_empty() {
        out.push_str(&format!("\n{FOLLOWUP_MARKER}\n"));
        for f in followups {
            out.push_str(&format!("- {f}\n"));
        }
    }
    out
}

pub fn args_prompt(
    tool: &str,
    step: usize,
    description: &str,
    request_block: &str,
    tables: &str,
    manual: &str,
    others: &[String],
) -> String {
    let others = if others.is_empty() { "none".to_string() } else { others.join(", ") };
    format!(
        "Provide arguments for tool `{tool}` for step {step}: {description}\n\n{request_block}\n\
         Loaded tables:\n{tables}\nTool manual:\n{manual}\n\nOther candidate tools: {others}."
    )
}

pub fn retry_prompt(tool: &str, error: &str) -> String {
    format!("Tool `{tool}` failed: {error}\nProvide corrected arguments for tool `{tool}`.")
}

pub fn classify_prompt(request: &str, message: &str) -> String {
    format!("{CLASSIFY_MARKER} against the ongoing analysis.\n\nOngoing request:\n{request}\n\n{MESSAGE_MARKER}\n{message}")
}

pub fn revise_prompt(message: &str, plan_listing: &str) -> String {
    format!("{REVISE_MARKER} for this follow-up instruction:\n{message}\n\nCurrent plan:\n{plan_listing}")
}
