//! Session persistence, the HTTP API and the headless runner for the story graph
//! engine.

pub mod api;
pub mod config;
pub mod headless;
pub mod session;
pub mod store;

use std::path::PathBuf;

use thiserror::Error;

pub use api::router;
pub use config::{build_backend, load_templates, scripted_backend, BackendSettings, ServiceConfig, SpecDefaults};
pub use headless::{run_story, write_outputs, RunOutputs};
pub use session::{AppState, Session};
pub use store::{SessionLog, SessionMeta, SessionStore};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {}: {message}", path.display())]
    Read { path: PathBuf, message: String },
    #[error("cannot parse {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("templates: {0}")]
    Templates(String),
    #[error("backend: {0}")]
    Backend(String),
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O error on {}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("session directory {} is not writable: {message}", path.display())]
    NotWritable { path: PathBuf, message: String },
    #[error("session {id} is corrupt: {reason}")]
    Corrupt { id: String, reason: String },
}
