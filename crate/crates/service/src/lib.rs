//! HTTP API for running experiment sessions with human participants, and the
//! command-line front end.

pub mod api;
pub mod cli;

pub use api::{router, AppState};
