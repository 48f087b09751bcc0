//! Plan-execute-reflect orchestration: a chat model decomposes an econometric
//! request into steps, picks tools for each step, repairs failed calls from
//! their error messages and reports the effect of interest.

pub mod backend;
pub mod error;
pub mod events;
pub mod plan;
pub mod prompts;
pub mod report;
pub mod request;
pub mod rules;
pub mod session;

pub use backend::{BackendConfig, LiveBackend};
pub use error::AgentError;
pub use events::{EventKind, StepEvent};
pub use plan::{build_plan, execution_order, Action, Plan, PlanTemplates, StepStatus, SubTask, TemplateStep};
pub use report::{export_result_json, format_sig10, result_json_text, FailureSummary, FinalReport, RunOutcome};
pub use request::{detect_family, parse_request, Family, RequestFacts};
pub use rules::RuleBackend;
pub use session::{create_session, FollowupResult, Intent, Session, SessionConfig, SessionStatus};
