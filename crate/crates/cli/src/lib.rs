//! Command-line front end and HTTP service for the econometrics agent.

pub mod commands;
pub mod server;

pub use commands::{run_cli, Cli, EXIT_CONFIG, EXIT_FAILED, EXIT_OK};
pub use server::{router, serve, AppState, ServerConfig, ServerError};
