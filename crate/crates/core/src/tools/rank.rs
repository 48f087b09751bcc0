use std::collections::BTreeSet;

use serde_json::Value;

use super::Registry;
use crate::chat::{last_json_object, ChatBackend, ChatMessage};

const STOPWORDS: &[&str] = &[
    "a", "about", "all", "an", "and", "any", "are", "as", "at", "be", "by", "can", "compute",
    "data", "do", "each", "for", "from", "given", "how", "i", "if", "in", "into", "is", "it", "its",
    "me", "method", "my", "of", "on", "or", "our", "please", "should", "so", "than", "that", "the",
    "their", "then", "there", "these", "this", "to", "tool", "use", "used", "using", "via", "want",
    "we", "what", "when", "which", "while", "will", "with", "would", "you", "your",
];

/// Lowercased alphanumeric tokens without stopwords; a trailing plural "s"
/// is dropped from longer words.
pub fn tokenize(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| {
            let t = t.to_ascii_lowercase();
            if t.len() > 3 && t.ends_with('s') && !t.ends_with("ss") {
                t[..t.len() - 1].to_string()
            } else {
                t
            }
        })
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Token-set cosine overlap in [0, 1].
pub fn lexical_score(task: &str, scenario: &str) -> f64 {
    let a = tokenize(task);
    let b = tokenize(scenario);
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let common = a.intersection(&b).count() as f64;
    common / ((a.len() * b.len()) as f64).sqrt()
}

fn sorted(mut scores: Vec<(String, f64)>) -> Vec<(String, f64)> {
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scores
}

fn model_scores(registry: &Registry, task: &str, backend: &dyn ChatBackend) -> Option<Vec<(String, f64)>> {
    let listing: String = registry
        .descriptors()
        .map(|d| {
            let scenario = d.summary.as_ref().map_or("", |s| s.target_scenario.as_str());
            format!("- {}: {}\n", d.name, scenario)
        })
        .collect();
    let messages = [
        ChatMessage::system(
            "Rate how well each tool's target scenario fits the task, from 0 (unrelated) to 1 \
             (exact fit). Reply with one JSON object mapping every tool name to its score.",
        ),
        ChatMessage::user(format!("Rank tools for this task: {task}\n\nTools:\n{listing}")),
    ];
    let reply = backend.complete(&messages, None).ok()?;
    let mut obj = last_json_object(reply.text()?)?;
    if let Some(inner) = obj.get("scores").filter(|v| v.is_object()).cloned() {
        obj = inner;
    }
    let map = obj.as_object()?;
    if !map.values().all(Value::is_number) || map.is_empty() {
        return None;
    }
    Some(
        registry
            .list_tools()
            .into_iter()
            .map(|name| {
                let s = map.get(&name).and_then(Value::as_f64).unwrap_or(0.0);
                (name, if s.is_finite() { s.clamp(0.0, 1.0) } else { 0.0 })
            })
            .collect(),
    )
}

/// Tools ordered by fit to `task`, best first, ties by name. A backend scores
/// the target scenarios when given; a failed or malformed model reply falls
/// back to lexical overlap.
pub fn rank_tools(
    registry: &Registry,
    task: &str,
    backend: Option<&dyn ChatBackend>,
) -> Vec<(String, f64)> {
    if let Some(scores) = backend.and_then(|b| model_scores(registry, task, b)) {
        return sorted(scores);
    }
    sorted(
        registry
            .descriptors()
            .map(|d| {
                let scenario = d.summary.as_ref().map_or("", |s| s.target_scenario.as_str());
                (d.name.clone(), lexical_score(task, scenario))
            })
            .collect(),
    )
}
