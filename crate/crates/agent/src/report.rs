use std::path::Path;

use econ_core::regression::INTERCEPT;
use serde::Serialize;
use serde_json::Value;

use crate::error::AgentError;

/// The effect of interest from a finished estimation, plus its exact JSON form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalReport {
    pub coefficient: f64,
    pub standard_error: f64,
    pub p_value: f64,
    pub method: String,
    pub term: Option<String>,
    pub full_result: Value,
    pub json_text: String,
    pub warnings: Vec<String>,
}

/// Why a run stopped without a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureSummary {
    pub step_id: usize,
    pub description: String,
    pub tool: Option<String>,
    pub errors: Vec<String>,
}

impl FailureSummary {
    pub fn message(&self) -> String {
        let last = self.errors.last().map_or("no error recorded", String::as_str);
        format!("step {} ({}) failed: {last}", self.step_id, self.description)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunOutcome {
    Report(FinalReport),
    Failure(FailureSummary),
}

impl RunOutcome {
    pub fn report(&self) -> Option<&FinalReport> {
        match self {
            RunOutcome::Report(r) => Some(r),
            RunOutcome::Failure(_) => None,
        }
    }

    pub fn failure(&self) -> Option<&FailureSummary> {
        match self {
            RunOutcome::Failure(f) => Some(f),
            RunOutcome::Report(_) => None,
        }
    }
}

/// Shortest decimal form of `x` rounded to 10 significant digits; integral
/// values print without a fraction, tiny ones in exponent form ("1e-17").
pub fn format_sig10(x: f64) -> String {
    let rounded: f64 = format!("{x:.9e}").parse().unwrap_or(x);
    if rounded == 0.0 {
        return "0".into();
    }
    if rounded.fract() == 0.0 && rounded.abs() < 1e15 {
        return format!("{}", rounded as i64);
    }
    serde_json::to_string(&rounded).unwrap_or_else(|_| rounded.to_string())
}

pub fn result_json_text(coefficient: f64, standard_error: f64, p_value: f64) -> String {
    format!(
        "{{\"coefficient\": {}, \"standard_error\": {}, \"p-value\": {}}}",
        format_sig10(coefficient),
        format_sig10(standard_error),
        format_sig10(p_value)
    )
}

/// Writes the report's JSON object followed by a single newline.
pub fn export_result_json(report: &FinalReport, path: &Path) -> Result<(), AgentError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| AgentError::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, format!("{}\n", report.json_text))
        .map_err(|e| AgentError::Io(format!("{}: {e}", path.display())))
}

struct Row {
    coefficient: f64,
    standard_error: f64,
    p_value: f64,
    term: Option<String>,
    warnings: Vec<String>,
}

fn numbers(v: &Value, key: &str) -> Option<Vec<f64>> {
    v.get(key)?.as_array()?.iter().map(Value::as_f64).collect()
}

fn strings(v: &Value, key: &str) -> Vec<String> {
    match v.get(key) {
        Some(Value::String(s)) => vec![s.clone()],
        Some(Value::Array(a)) => a.iter().filter_map(|x| x.as_str().map(str::to_string)).collect(),
        _ => Vec::new(),
    }
}

fn fit_row(fit: &Value, args: &Value) -> Result<Row, String> {
    let names = strings(fit, "coefficient_names");
    let (Some(b), Some(se), Some(p)) =
        (numbers(fit, "coefficients"), numbers(fit, "standard_errors"), numbers(fit, "p_values"))
    else {
        return Err("estimation result has no coefficient table".into());
    };
    let mut warnings = Vec::new();
    let requested = strings(args, "report_term");
    if let Some(term) = requested.first() {
        if !names.contains(term) {
            return Err(format!("term '{term}' is not among the coefficients [{}]", names.join(", ")));
        }
    }
    let candidates = requested
        .into_iter()
        .chain(strings(args, "treatment"))
        .chain(strings(args, "endogenous").into_iter().take(1));
    let mut index = None;
    for c in candidates {
        if let Some(i) = names.iter().position(|n| *n == c) {
            index = Some(i);
            break;
        }
    }
    let i = match index {
        Some(i) => i,
        None => {
            let non_intercept: Vec<usize> =
                (0..names.len()).filter(|&i| names[i] != INTERCEPT).collect();
            let &first = non_intercept.first().ok_or("no non-intercept coefficient to report")?;
            if non_intercept.len() > 1 {
                warnings.push(format!(
                    "effect term not named by the arguments; reporting the first non-intercept coefficient '{}'",
                    names[first]
                ));
            }
            first
        }
    };
    Ok(Row {
        coefficient: b[i],
        standard_error: se[i],
        p_value: p[i],
        term: names.get(i).cloned(),
        warnings,
    })
}

fn effect_row(result: &Value, args: &Value) -> Result<Row, String> {
    if let Some(fit) = result.get("fit") {
        return fit_row(fit, args);
    }
    if result.get("coefficient_names").is_some() {
        return fit_row(result, args);
    }
    if let Some(est) = result.get("point_estimate").and_then(Value::as_f64) {
        let se = result.get("bootstrap_se").and_then(Value::as_f64).ok_or(
            "matching result has no standard error; rerun with bootstrap_reps of at least 2",
        )?;
        let p = result.get("p_value").and_then(Value::as_f64).ok_or("matching result has no p-value")?;
        let term = result.get("estimand").and_then(Value::as_str).map(str::to_uppercase);
        return Ok(Row { coefficient: est, standard_error: se, p_value: p, term, warnings: vec![] });
    }
    if let Some(effect) = result.get("effect").and_then(Value::as_f64) {
        let get = |k: &str| result.get(k).and_then(Value::as_f64).ok_or(format!("result has no '{k}'"));
        return Ok(Row {
            coefficient: effect,
            standard_error: get("standard_error")?,
            p_value: get("p_value")?,
            term: Some("effect".into()),
            warnings: vec![],
        });
    }
    Err("result has no recognisable effect estimate".into())
}

/// Builds the report for `tool`'s `result` called with `args`.
pub fn build_report(tool: &str, args: &Value, result: &Value) -> Result<FinalReport, String> {
    let row = effect_row(result, args)?;
    for (label, v) in [("coefficient", row.coefficient), ("standard error", row.standard_error), ("p-value", row.p_value)] {
        if !v.is_finite() {
            return Err(format!("{label} is not finite"));
        }
    }
    Ok(FinalReport {
        coefficient: row.coefficient,
        standard_error: row.standard_error,
        p_value: row.p_value,
        method: tool.to_string(),
        term: row.term,
        full_result: result.clone(),
        json_text: result_json_text(row.coefficient, row.standard_error, row.p_value),
        warnings: row.warnings,
    })
}
