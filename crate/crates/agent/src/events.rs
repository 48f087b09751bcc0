use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    StepStarted,
    StepRetrying { attempt: u32, error_excerpt: String },
    StepDone,
    StepFailed,
    PlanUpdated,
    FinalReport,
}

/// Progress notification; `seq` increases by one per event within a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub session_id: String,
    pub seq: u64,
    pub subtask_id: Option<usize>,
    #[serde(flatten)]
    pub kind: EventKind,
    pub timestamp_ms: u64,
    pub payload: Value,
}

/// Shortened error text for event payloads.
pub fn excerpt(text: &str) -> String {
    const LIMIT: usize = 200;
    let line = text.lines().next().unwrap_or("");
    if line.chars().count() <= LIMIT {
        line.to_string()
    } else {
        let cut: String = line.chars().take(LIMIT).collect();
        format!("{cut}...")
    }
}
