use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use econ_agent::{create_session, parse_request, BackendConfig, RunOutcome, Session, SessionConfig};
use econ_core::tools::Registry;
use econ_eval::{
    aggregate_metrics, load_corpus, render_report, run_suite, AgentRunner, FailingRunner, PPerfectMode, ReportFormat,
    Runner, SubprocessRunner, SuiteOptions,
};

use crate::server::{serve, ServerConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_FAILED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "econ", version, about = "Econometrics agent: one-shot runs, chat, benchmark evaluation and HTTP service")]
pub struct Cli {
    /// Chat backend: rules, scripted or live.
    #[arg(long, global = true, default_value = "rules")]
    pub backend: String,
    /// Fixture file for the scripted backend.
    #[arg(long, global = true)]
    pub fixtures: Option<PathBuf>,
    /// Directory relative data paths resolve against.
    #[arg(long, global = true, default_value = ".")]
    pub data_dir: PathBuf,
    /// Result file (run) or report file (eval).
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// text, json or csv.
    #[arg(long, global = true, default_value = "text")]
    pub format: String,
    #[arg(long, global = true, default_value_t = 3)]
    pub max_retries: u32,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one task request and write its result JSON.
    Run {
        /// Request text; read from --prompt-file when absent.
        text: Option<String>,
        #[arg(long)]
        prompt_file: Option<PathBuf>,
        /// Dataset path, added to the request when it names none.
        #[arg(long)]
        data: Option<String>,
    },
    /// Multi-round conversation over standard input.
    Chat,
    /// Run a task corpus and report replication metrics.
    Eval {
        corpus: PathBuf,
        /// agent, failing or subprocess.
        #[arg(long, default_value = "agent")]
        runner: String,
        /// Program for the subprocess runner.
        #[arg(long)]
        program: Option<String>,
        /// Program argument; may use {prompt}, {data} and {output}.
        #[arg(long = "arg", allow_hyphen_values = true)]
        args: Vec<String>,
        /// absolute or relative.
        #[arg(long, default_value = "absolute")]
        p_mode: String,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[arg(long, default_value_t = 300)]
        budget_secs: u64,
    },
    /// List the registered tools.
    Tools,
    /// Serve the session API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        #[arg(long, default_value_t = 16)]
        max_sessions: usize,
        /// Write sessions to this file on shutdown.
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
}

struct ConfigError(String);

impl<E: std::fmt::Display> From<E> for ConfigError {
    fn from(e: E) -> Self {
        ConfigError(e.to_string())
    }
}

fn session_config(cli: &Cli, output: Option<PathBuf>) -> Result<SessionConfig, ConfigError> {
    if cli.max_retries == 0 {
        return Err(ConfigError("--max-retries must be at least 1".into()));
    }
    Ok(SessionConfig {
        backend: BackendConfig::from_spec(&cli.backend, cli.fixtures.clone())?,
        max_retries: cli.max_retries,
        data_dir: cli.data_dir.clone(),
        output_path: output,
        ..SessionConfig::default()
    })
}

fn dataset_exists(data_dir: &Path, raw: &str) -> bool {
    let path = Path::new(raw);
    let full = if path.is_absolute() { path.to_path_buf() } else { data_dir.join(path) };
    full.is_file() || full.with_extension("csv").is_file()
}

fn request_text(text: &Option<String>, prompt_file: &Option<PathBuf>, data: &Option<String>) -> Result<String, ConfigError> {
    let mut request = match (text, prompt_file) {
        (Some(t), None) => t.clone(),
        (None, Some(p)) => std::fs::read_to_string(p).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?,
        (Some(_), Some(_)) => return Err(ConfigError("give the request inline or with --prompt-file, not both".into())),
        (None, None) => return Err(ConfigError("no request: pass text or --prompt-file".into())),
    };
    if request.trim().is_empty() {
        return Err(ConfigError("the request is empty".into()));
    }
    if let Some(d) = data {
        if parse_request(&request).data_path.is_none() {
            request.push_str(&format!("\n\nYou could load the corresponding data from {d}."));
        }
    }
    Ok(request)
}

fn print_outcome<W: Write>(outcome: &RunOutcome, format: &str, out: &mut W) -> std::io::Result<()> {
    match (outcome, format) {
        (_, "json") => writeln!(out, "{}", serde_json::to_string_pretty(outcome).unwrap_or_default()),
        (RunOutcome::Report(r), _) => {
            writeln!(out, "method: {}", r.method)?;
            if let Some(term) = &r.term {
                writeln!(out, "term: {term}")?;
            }
            for w in &r.warnings {
                writeln!(out, "warning: {w}")?;
            }
            writeln!(out, "{}", r.json_text)
        }
        (RunOutcome::Failure(f), _) => {
            writeln!(out, "failed step {}: {}", f.step_id, f.description)?;
            if let Some(tool) = &f.tool {
                writeln!(out, "tool: {tool}")?;
            }
            for (i, e) in f.errors.iter().enumerate() {
                writeln!(out, "attempt {}: {e}", i + 1)?;
            }
            Ok(())
        }
    }
}

fn cmd_run<W: Write, E: Write>(
    cli: &Cli,
    text: &Option<String>,
    prompt_file: &Option<PathBuf>,
    data: &Option<String>,
    out: &mut W,
    err: &mut E,
) -> Result<i32, ConfigError> {
    let request = request_text(text, prompt_file, data)?;
    match parse_request(&request).data_path {
        Some(p) if !dataset_exists(&cli.data_dir, &p) => {
            return Err(ConfigError(format!("dataset not found: {p} (data directory {})", cli.data_dir.display())))
        }
        _ => {}
    }
    let output = cli.output.clone().or_else(|| Some(PathBuf::from("result.json")));
    let mut session = create_session(session_config(cli, output.clone())?)?;
    let outcome = session.run_request(&request)?;
    print_outcome(&outcome, &cli.format, out)?;
    Ok(match outcome {
        RunOutcome::Report(_) => {
            if let Some(p) = output {
                writeln!(err, "result written to {}", p.display())?;
            }
            EXIT_OK
        }
        RunOutcome::Failure(f) => {
            writeln!(err, "{}", f.message())?;
            EXIT_FAILED
        }
    })
}

fn print_new_events<W: Write>(session: &Session, printed: &mut u64, out: &mut W) -> std::io::Result<()> {
    let after = *printed;
    for e in session.events().iter().filter(|e| e.seq > after) {
        let v = serde_json::to_value(e).unwrap_or_default();
        let step = e.subtask_id.map_or(String::new(), |s| format!(" step {s}"));
        let detail = match v["event"].as_str() {
            Some("step_retrying") => format!(" attempt {}: {}", v["attempt"], v["error_excerpt"].as_str().unwrap_or("")),
            Some("step_done") | Some("step_started") => {
                let tool = v["payload"]["tool"].as_str().or(v["payload"]["description"].as_str()).unwrap_or("");
                format!(" {tool}")
            }
            _ => String::new(),
        };
        writeln!(out, "[{}]{step} {}{detail}", e.seq, v["event"].as_str().unwrap_or("?"))?;
        *printed = e.seq;
    }
    Ok(())
}

fn print_plan<W: Write>(session: &Session, out: &mut W) -> std::io::Result<()> {
    if let Some(plan) = session.plan() {
        writeln!(out, "plan ({}):", plan.template_name)?;
        for s in &plan.subtasks {
            writeln!(out, "  {}. {} [{}]", s.id, s.description, s.action)?;
        }
    }
    Ok(())
}

fn tool_lines<W: Write>(out: &mut W) -> std::io::Result<()> {
    for d in Registry::builtin().descriptors() {
        let scenario = d.summary.as_ref().map_or("", |s| s.target_scenario.as_str());
        writeln!(out, "{:<26} {}", d.name, scenario)?;
    }
    Ok(())
}

fn cmd_chat<R: BufRead, W: Write>(cli: &Cli, input: R, out: &mut W) -> Result<i32, ConfigError> {
    let mut session = create_session(session_config(cli, cli.output.clone())?)?;
    let mut printed = 0;
    writeln!(out, "session {} (backend {}); :tools lists tools, :quit ends", session.id, session.backend_identity())?;
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        match line {
            "" => continue,
            ":quit" | ":q" => break,
            ":tools" => {
                tool_lines(out)?;
                continue;
            }
            _ => {}
        }
        let result = if session.plan().is_none() {
            session.run_request(line).map(|o| (None, o))
        } else {
            session.handle_followup(line).map(|r| (Some((r.intent, r.rerun)), r.outcome))
        };
        match result {
            Ok((routing, outcome)) => {
                if let Some((intent, rerun)) = routing {
                    let intent = serde_json::to_value(intent).unwrap_or_default();
                    writeln!(out, "intent: {} rerun: {rerun:?}", intent.as_str().unwrap_or("?"))?;
                }
                print_plan(&session, out)?;
                print_new_events(&session, &mut printed, out)?;
                print_outcome(&outcome, &cli.format, out)?;
            }
            Err(e) => writeln!(out, "error: {e}")?,
        }
    }
    Ok(EXIT_OK)
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval<W: Write, E: Write>(
    cli: &Cli,
    corpus: &Path,
    runner: &str,
    program: &Option<String>,
    args: &[String],
    p_mode: &str,
    workers: usize,
    budget_secs: u64,
    out: &mut W,
    err: &mut E,
) -> Result<i32, ConfigError> {
    let format = ReportFormat::from_str(&cli.format)?;
    let mode = match p_mode {
        "absolute" => PPerfectMode::Absolute,
        "relative" => PPerfectMode::Relative,
        other => return Err(ConfigError(format!("unknown p-value mode '{other}'"))),
    };
    let tasks = load_corpus(corpus)?;
    let runner: Arc<dyn Runner> = match runner {
        "agent" => Arc::new(AgentRunner { config: session_config(cli, None)? }),
        "failing" => Arc::new(FailingRunner),
        "subprocess" => Arc::new(SubprocessRunner {
            program: program.clone().ok_or_else(|| ConfigError("the subprocess runner needs --program".into()))?,
            args: args.to_vec(),
        }),
        other => return Err(ConfigError(format!("unknown runner '{other}'"))),
    };
    let options = SuiteOptions { budget: Duration::from_secs(budget_secs.max(1)), workers: workers.max(1) };
    let records = run_suite(&tasks, runner, options);
    for r in records.iter().filter(|r| !r.completed) {
        writeln!(err, "{}: {}", r.task_id, r.failure_reason.as_deref().unwrap_or("failed"))?;
    }
    let report = aggregate_metrics(&records, &tasks, mode);
    let document = render_report(&report, format);
    write!(out, "{document}")?;
    if let Some(path) = &cli.output {
        std::fs::write(path, &document).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    }
    Ok(EXIT_OK)
}

fn cmd_serve(cli: &Cli, bind: &str, max_sessions: usize, snapshot: &Option<PathBuf>) -> Result<i32, ConfigError> {
    let bind: SocketAddr = bind.parse().map_err(|e| ConfigError(format!("bad --bind '{bind}': {e}")))?;
    let config = ServerConfig {
        bind,
        data_dir: cli.data_dir.clone(),
        max_sessions,
        session: session_config(cli, None)?,
        snapshot: snapshot.clone(),
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(serve(config))?;
    Ok(EXIT_OK)
}

/// Parses `args` and runs the command; the return value is the exit code.
pub fn run_cli<I, T, R, W, E>(args: I, input: R, out: &mut W, err: &mut E) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    R: BufRead,
    W: Write,
    E: Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Run { text, prompt_file, data } => cmd_run(&cli, text, prompt_file, data, out, err),
        Command::Chat => cmd_chat(&cli, input, out),
        Command::Eval { corpus, runner, program, args, p_mode, workers, budget_secs } => {
            cmd_eval(&cli, corpus, runner, program, args, p_mode, *workers, *budget_secs, out, err)
        }
        Command::Tools => session_config(&cli, None)
            .and_then(|_| tool_lines(out).map_err(ConfigError::from))
            .map(|_| EXIT_OK),
        Command::Serve { bind, max_sessions, snapshot } => cmd_serve(&cli, bind, *max_sessions, snapshot),
    };
    match result {
        Ok(code) => code,
        Err(ConfigError(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_CONFIG
        }
    }
}
