//! Econometric estimators, causal-inference tools and the function-calling
//! tool registry that exposes them to a language-model agent.

pub mod causal;
pub mod chat;
pub mod data;
pub mod error;
pub mod linalg;
pub mod regression;
pub mod tools;

pub use error::{EconError, Result};
