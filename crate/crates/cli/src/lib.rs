//! Command-line interface and HTTP service for the concept-oriented
//! knowledge base.

pub mod api;
pub mod commands;

pub use api::{router, serve, AppState};
pub use commands::{run, Cli};
