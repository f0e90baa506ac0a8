//! Command-line front end: configuration, seeding, persistence and replay
//! for the skewlab pipelines.

pub mod config;
pub mod manifest;
pub mod pipeline;

pub use config::RunConfig;
pub use manifest::RunManifest;
pub use pipeline::{replay, run, Command, RunOutcome, Target};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_CHECK: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] skewlab::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(e) if e.is_config() => EXIT_CONFIG,
            CliError::Core(_) | CliError::Io(_) => EXIT_NUMERICAL,
        }
    }
}
