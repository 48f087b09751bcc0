use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("unknown backend '{0}'")]
    UnknownBackend(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("session is busy with another request")]
    Busy,
    #[error("no plan in session")]
    NoPlan,
    #[error("no step {0} in the plan")]
    UnknownStep(usize),
    #[error("step {step} does not take ranked tools (action {action})")]
    FixedRoute { step: usize, action: String },
    #[error("no valid arguments for step {step} after {attempts} attempt(s): {last_error}")]
    ArgsInvalidAfterRetries { step: usize, attempts: u32, last_error: String },
    #[error("cannot report: {0}")]
    Report(String),
}
