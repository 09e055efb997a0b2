//! Library surface of the command-line driver: config schema, command
//! implementations, and the manifest machinery, shared by the binary and the
//! integration tests.

pub mod commands;
pub mod config;
pub mod manifest;

use pide_core::error::CoreError;

/// Everything a command needs from the invocation.
pub struct Invocation {
    pub config: config::RunConfig,
    pub seed: u64,
    pub threads: usize,
    pub force: bool,
}

#[derive(Debug)]
pub struct CliError {
    pub exit: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> CliError {
        CliError {
            exit: 2,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> CliError {
        CliError {
            exit: 3,
            message: message.into(),
        }
    }

    pub fn from_core(err: CoreError) -> CliError {
        CliError {
            exit: commands::map_core_exit(&err),
            message: err.to_string(),
        }
    }
}
