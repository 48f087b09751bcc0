use std::path::Path;
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use econ_agent::{create_session, RunOutcome, SessionConfig};
use econ_core::chat::json_objects;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::task::{build_prompt, TaskSpec};
use crate::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extracted {
    pub coefficient: f64,
    pub standard_error: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task_id: String,
    pub completed: bool,
    pub extracted: Option<Extracted>,
    pub elapsed_ms: u64,
    pub failure_reason: Option<String>,
}

impl RunRecord {
    pub fn failed(task_id: &str, elapsed_ms: u64, reason: impl Into<String>) -> Self {
        Self { task_id: task_id.into(), completed: false, extracted: None, elapsed_ms, failure_reason: Some(reason.into()) }
    }
}

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// The last JSON object in `text` holding numeric `coefficient`,
/// `standard_error` and `p-value` keys.
pub fn extract_result(text: &str) -> Result<Extracted, EvalError> {
    json_objects(text)
        .iter()
        .rev()
        .find_map(|o| {
            Some(Extracted {
                coefficient: number(o.get("coefficient")?)?,
                standard_error: number(o.get("standard_error")?)?,
                p_value: number(o.get("p-value")?)?,
            })
        })
        .ok_or(EvalError::NoResultFound)
}

pub fn extract_result_file(path: &Path) -> Result<Extracted, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    extract_result(&text)
}

/// Something that answers a task prompt. The returned text is the run's
/// artifact (it must contain the result JSON); an error is the reason the
/// run failed.
pub trait Runner: Send + Sync {
    fn name(&self) -> String;

    fn run(&self, prompt: &str, data_path: &str) -> Result<String, String>;
}

/// Runs each task through a fresh agent session.
pub struct AgentRunner {
    pub config: SessionConfig,
}

impl Runner for AgentRunner {
    fn name(&self) -> String {
        "agent".into()
    }

    fn run(&self, prompt: &str, _data_path: &str) -> Result<String, String> {
        let mut session = create_session(self.config.clone()).map_err(|e| e.to_string())?;
        match session.run_request(prompt).map_err(|e| e.to_string())? {
            RunOutcome::Report(r) => Ok(r.json_text),
            RunOutcome::Failure(f) => Err(f.message()),
        }
    }
}

/// Baseline stub: every run fails.
pub struct FailingRunner;

impl Runner for FailingRunner {
    fn name(&self) -> String {
        "failing".into()
    }

    fn run(&self, _prompt: &str, _data_path: &str) -> Result<String, String> {
        Err("runner not implemented".into())
    }
}

/// External program taking the prompt file, data path and result path.
/// Arguments may use the placeholders `{prompt}`, `{data}` and `{output}`;
/// when the program leaves no result file its standard output is used.
pub struct SubprocessRunner {
    pub program: String,
    pub args: Vec<String>,
}

impl Runner for SubprocessRunner {
    fn name(&self) -> String {
        format!("subprocess:{}", self.program)
    }

    fn run(&self, prompt: &str, data_path: &str) -> Result<String, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let prompt_file = dir.path().join("prompt.txt");
        let output_file = dir.path().join("result.json");
        std::fs::write(&prompt_file, prompt).map_err(|e| e.to_string())?;
        let args: Vec<String> = self
            .args
            .iter()
            .map(|a| {
                a.replace("{prompt}", &prompt_file.display().to_string())
                    .replace("{data}", data_path)
                    .replace("{output}", &output_file.display().to_string())
            })
            .collect();
        let out = Command::new(&self.program).args(&args).output().map_err(|e| format!("{}: {e}", self.program))?;
        if !out.status.success() {
            let stderr = String::from_utf8_lossy(&out.stderr);
            return Err(format!("{} exited with {}: {}", self.program, out.status, stderr.trim()));
        }
        match std::fs::read_to_string(&output_file) {
            Ok(text) => Ok(text),
            Err(_) => Ok(String::from_utf8_lossy(&out.stdout).into_owned()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    /// Wall-clock budget per task; overruns are recorded as failures.
    pub budget: Duration,
    pub workers: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { budget: Duration::from_secs(300), workers: 4 }
    }
}

fn run_one(task: &TaskSpec, runner: &Arc<dyn Runner>, budget: Duration) -> RunRecord {
    let prompt = build_prompt(task);
    let data = task.data_path.clone();
    let start = Instant::now();
    let (tx, rx) = mpsc::channel();
    let r = Arc::clone(runner);
    thread::spawn(move || {
        let _ = tx.send(r.run(&prompt, &data));
    });
    let received = rx.recv_timeout(budget);
    let elapsed_ms = start.elapsed().as_millis() as u64;
    match received {
        Ok(Ok(artifact)) => match extract_result(&artifact) {
            Ok(x) => RunRecord {
                task_id: task.id.clone(),
                completed: true,
                extracted: Some(x),
                elapsed_ms,
                failure_reason: None,
            },
            Err(e) => RunRecord::failed(&task.id, elapsed_ms, e.to_string()),
        },
        Ok(Err(reason)) => RunRecord::failed(&task.id, elapsed_ms, reason),
        Err(RecvTimeoutError::Timeout) => {
            RunRecord::failed(&task.id, elapsed_ms, format!("exceeded the {} s budget", budget.as_secs_f64()))
        }
        Err(RecvTimeoutError::Disconnected) => RunRecord::failed(&task.id, elapsed_ms, "runner panicked"),
    }
}

/// One record per task, in task order, with at most `workers` tasks in
/// flight. A task whose runner overruns the budget is recorded as failed and
/// its thread is abandoned.
pub fn run_suite(tasks: &[TaskSpec], runner: Arc<dyn Runner>, options: SuiteOptions) -> Vec<RunRecord> {
    let slots: Mutex<Vec<Option<RunRecord>>> = Mutex::new(vec![None; tasks.len()]);
    let next = AtomicUsize::new(0);
    let workers = options.workers.clamp(1, tasks.len().max(1));
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(task) = tasks.get(i) else { break };
                let record = run_one(task, &runner, options.budget);
                slots.lock().expect("record lock")[i] = Some(record);
            });
        }
    });
    slots
        .into_inner()
        .expect("record lock")
        .into_iter()
        .zip(tasks)
        .map(|(r, t)| r.unwrap_or_else(|| RunRecord::failed(&t.id, 0, "not run")))
        .collect()
}
