//! Reading the structured pieces out of a task request written in the fixed
//! prompt layout ("Please use the X method to compute the effect of T on Y...").

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

macro_rules! re {
    ($name:ident, $pat:literal) => {
        static $name: LazyLock<Regex> = LazyLock::new(|| Regex::new($pat).expect("valid pattern"));
    };
}

re!(METHOD, r"(?i)\buse (?:the )?(.+?) method\b");
re!(EFFECT, r#"(?i)\b(?:effect|ATET|ATE) of ["“']?([A-Za-z0-9_.]+)["”']? on ["“']?([A-Za-z0-9_.]+)"#);
re!(CONTROLS, r"(?i)following control variables?\s*:\s*([^\n]+?)\.?\s*(?:\n|$)");
re!(REQUIREMENTS, r"(?is)following requirements?\s*:\s*(.+?)\s*(?:\n\s*\n|you could load|\z)");
re!(DATA_PATH, r"(?i)load the (?:corresponding )?data from\s+(\S+)");
re!(PATH_TOKEN, r"(?i)(?:^|\s)([~./\w-]*[/\\]?[\w.-]+\.(?:csv|dta|tsv|txt|xlsx?))\b");
re!(CATEGORICAL, r"(?i)([A-Za-z0-9_, ]+?)\s+(?:are|is)\s+(?:(?:multi-class|multiclass|binary)\s+)?categorical");
re!(TRIM_HIGH, r"(?i)highest\s+(\d+(?:\.\d+)?)\s*%");
re!(TRIM_LOW, r"(?i)lowest\s+(\d+(?:\.\d+)?)\s*%");
re!(TRIM_BELOW, r"(?i)below\s+(0?\.\d+)");
re!(TRIM_ABOVE, r"(?i)above\s+(0?\.\d+)");
re!(CLUSTER, r"(?i)cluster(?:ed|ing)?\s+(?:the\s+)?(?:standard\s+errors?\s+)?(?:by|at(?: the)?|on)\s+([A-Za-z0-9_]+)");
re!(FIXED_EFFECT, r"(?i)([A-Za-z0-9_]+)\s+fixed[ -]effects?");
re!(SEE_BACK, r"(?i)see-?back length (?:as|of|=|is)\s*(\d+)");
re!(SEE_FORWARD, r"(?i)see-?forward length (?:as|of|=|is)\s*(\d+)");
re!(REPORT_TERM, r#"(?i)coefficient (?:towards|of|on|for) ["“']?([A-Za-z0-9_]+)["”']? term"#);
re!(INSTRUMENT, r#"(?i)(?:using|use|with) ["“']?([A-Za-z0-9_]+)["”']? as (?:the |an )?instruments?"#);
re!(INSTRUMENT_LIST, r"(?i)instruments?(?: variables?)?\s*(?:is|are|:)\s*([A-Za-z0-9_, ]+)");
re!(RUNNING, r#"(?i)running variable (?:is |as |:)?\s*["“']?([A-Za-z0-9_]+)"#);
re!(CUTOFF, r"(?i)(?:cutoff|threshold)\s*(?:is|of|at|=|:)?\s*(-?\d+(?:\.\d+)?)");
re!(BANDWIDTH, r"(?i)bandwidth\s*(?:is|of|as|=|:)?\s*(\d+(?:\.\d+)?)");
re!(ADOPTION, r#"(?i)(?:adoption|treatment start|first treated)\s+(?:time|year|period)?\s*(?:column\s+)?(?:is|:|=)?\s*["“']?([A-Za-z0-9_]+)"#);
re!(UNIT, r#"(?i)\bunit (?:identifier|id|variable|column)\s*(?:is|:|=)?\s*["“']?([A-Za-z0-9_]+)"#);
re!(TIME, r#"(?i)\btime (?:identifier|variable|column)\s*(?:is|:|=)?\s*["“']?([A-Za-z0-9_]+)"#);
re!(BOOTSTRAP, r"(?i)(\d+)\s+bootstrap");
re!(LOG_DERIVE, r"(?i)construct\s+([A-Za-z0-9_]+).*?logarithm of\s+([A-Za-z0-9_]+)");

/// Method family, used to choose a plan template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Regression,
    Propensity,
    Iv,
    Did,
    Rdd,
}

impl Family {
    pub const ALL: [Family; 5] =
        [Family::Regression, Family::Propensity, Family::Iv, Family::Did, Family::Rdd];

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Regression => "regression",
            Family::Propensity => "propensity",
            Family::Iv => "iv",
            Family::Did => "did",
            Family::Rdd => "rdd",
        }
    }
}

/// How propensity scores should be trimmed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimHint {
    pub mode: &'static str,
    pub lower: f64,
    pub upper: f64,
}

/// Everything recognisable in a request. Fields stay empty when the request
/// does not say.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RequestFacts {
    pub method: Option<String>,
    pub treatment: Option<String>,
    pub outcome: Option<String>,
    pub controls: Vec<String>,
    pub requirements: String,
    pub data_path: Option<String>,
    pub categorical: Vec<String>,
    pub trim: Option<TrimHint>,
    pub cluster: Option<String>,
    pub robust: bool,
    pub fixed_effects: Vec<String>,
    pub see_back: Option<i64>,
    pub see_forward: Option<i64>,
    pub report_term: Option<String>,
    pub instruments: Vec<String>,
    pub running: Option<String>,
    pub cutoff: Option<f64>,
    pub bandwidth: Option<f64>,
    pub adoption: Option<String>,
    pub unit: Option<String>,
    pub time: Option<String>,
    pub atet: bool,
    pub bootstrap_reps: Option<i64>,
    /// (new column, source column) for "construct X ... logarithm of Y".
    pub log_derive: Option<(String, String)>,
}

fn capture(re: &Regex, text: &str) -> Option<String> {
    re.captures(text).map(|c| c[1].trim().to_string())
}

fn split_list(text: &str) -> Vec<String> {
    text.split([',', ';'])
        .flat_map(|part| part.split(" and "))
        .map(|s| s.trim().trim_matches(|c| c == '"' || c == '\'' || c == '.').to_string())
        .filter(|s| !s.is_empty() && !s.contains(' '))
        .collect()
}

const FE_NOISE: &[&str] = &["add", "and", "with", "include", "the", "two", "way", "two-way", "both"];

pub fn parse_request(text: &str) -> RequestFacts {
    let mut f = RequestFacts { method: capture(&METHOD, text), ..RequestFacts::default() };
    if let Some(c) = EFFECT.captures(text) {
        f.treatment = Some(c[1].trim_end_matches('.').to_string());
        f.outcome = Some(c[2].trim_end_matches('.').to_string());
    }
    if let Some(list) = capture(&CONTROLS, text) {
        f.controls = split_list(&list);
    }
    f.requirements = capture(&REQUIREMENTS, text).unwrap_or_default();
    f.data_path = capture(&DATA_PATH, text)
        .or_else(|| capture(&PATH_TOKEN, text))
        .map(|p| p.trim_end_matches(['.', ',']).trim_matches('"').to_string());

    let req = if f.requirements.is_empty() { text } else { f.requirements.as_str() };
    for c in CATEGORICAL.captures_iter(req) {
        f.categorical.extend(split_list(&c[1]));
    }
    if req.to_lowercase().contains("trim") {
        let pct = |re: &Regex| capture(re, req).and_then(|v| v.parse::<f64>().ok());
        if let (Some(h), Some(l)) = (pct(&TRIM_HIGH), pct(&TRIM_LOW)) {
            f.trim = Some(TrimHint { mode: "quantile", lower: l / 100.0, upper: 1.0 - h / 100.0 });
        } else if let (Some(lo), Some(hi)) = (pct(&TRIM_BELOW), pct(&TRIM_ABOVE)) {
            f.trim = Some(TrimHint { mode: "threshold", lower: lo, upper: hi });
        }
    }
    f.cluster = capture(&CLUSTER, text);
    let lower = text.to_lowercase();
    f.robust = lower.contains("robust standard error") || lower.contains("heteroskedasticity");
    for c in FIXED_EFFECT.captures_iter(text) {
        let name = c[1].to_string();
        if !FE_NOISE.contains(&name.to_lowercase().as_str()) && !f.fixed_effects.contains(&name) {
            f.fixed_effects.push(name);
        }
    }
    let int = |re: &Regex| capture(re, text).and_then(|v| v.parse::<i64>().ok());
    let num = |re: &Regex| capture(re, text).and_then(|v| v.parse::<f64>().ok());
    f.see_back = int(&SEE_BACK);
    f.see_forward = int(&SEE_FORWARD);
    f.report_term = capture(&REPORT_TERM, text);
    if let Some(z) = capture(&INSTRUMENT, text) {
        f.instruments.push(z);
    } else if let Some(list) = capture(&INSTRUMENT_LIST, text) {
        f.instruments = split_list(&list);
    }
    f.running = capture(&RUNNING, text);
    f.cutoff = num(&CUTOFF);
    f.bandwidth = num(&BANDWIDTH);
    f.adoption = capture(&ADOPTION, text);
    f.unit = capture(&UNIT, text);
    f.time = capture(&TIME, text);
    f.atet = text.contains("ATET") || lower.contains("effect on the treated");
    f.bootstrap_reps = int(&BOOTSTRAP);
    f.log_derive = LOG_DERIVE.captures(text).map(|c| (c[1].to_string(), c[2].to_string()));
    f
}

/// Method family named by a request; plain regression when nothing matches.
pub fn detect_family(text: &str) -> Family {
    let t = text.to_lowercase();
    let method = capture(&METHOD, text).map(|m| m.to_lowercase());
    let probe = method.as_deref().unwrap_or(&t);
    let has = |words: &[&str]| words.iter().any(|w| probe.contains(w));
    let has_word = |word: &str| probe.split(|c: char| !c.is_alphanumeric()).any(|w| w == word);
    if has(&["propensity", "matching", "inverse probability"]) {
        Family::Propensity
    } else if has(&["instrument", "2sls", "two-stage", "two stage", " iv"]) || probe.starts_with("iv") {
        Family::Iv
    } else if has(&["discontinuity", "rdd", "rd design"]) {
        Family::Rdd
    } else if has(&["difference-in-difference", "difference in difference", "event study"]) || has_word("did") {
        Family::Did
    } else {
        Family::Regression
    }
}

/// Whether a follow-up message points at a different dataset.
pub fn mentions_data_path(text: &str) -> bool {
    PATH_TOKEN.is_match(text)
}
