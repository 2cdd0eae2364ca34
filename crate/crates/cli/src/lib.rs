//! `gi`: simulate, reconstruct and score ghost images behind a diffuser.

pub mod commands;
pub mod config;
pub mod formats;

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] gi_core::Error),
    #[error("cannot read {}: {source}", .path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {}: {source}", .path.display())]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{}: byte {offset}: {msg}", .path.display())]
    Format { path: PathBuf, offset: usize, msg: String },
}

impl CliError {
    /// 2 for usage and configuration problems (including an unwritable
    /// output location), 3 for unreadable or malformed input, 4 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => e.exit_code(),
            CliError::Write { .. } => 2,
            CliError::Read { .. } | CliError::Format { .. } => 3,
        }
    }
}

pub use commands::run;
