//! Command line driver and HTTP service around the `d3rec` core.
//!
//! * [`config`] JSON run configuration
//! * [`engine`] a loaded model plus catalog, shared by `recommend` and the service
//! * [`commands`] one function per subcommand
//! * [`service`] the axum router

pub mod commands;
pub mod config;
pub mod engine;
pub mod service;

use thiserror::Error;

/// Failure of a command, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<d3rec::Error> for CliError {
    fn from(e: d3rec::Error) -> Self {
        use d3rec::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) | E::Contract(_) => CliError::Config(msg),
            E::Numeric(_) => CliError::Numeric(msg),
            E::Data(_) | E::Parse { .. } | E::Io { .. } | E::Json(_) => CliError::Data(msg),
        }
    }
}

/// Error lines must stay on one line for machine parsing.
pub fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
