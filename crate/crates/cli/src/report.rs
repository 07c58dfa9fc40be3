use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_STRUCTURE: i32 = 3;
pub const EXIT_CHECK: i32 = 4;
pub const EXIT_RUNTIME: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("structure error: {0}")]
    Structure(ultrakfp::Error),
    #[error("runtime error: {0}")]
    Runtime(#[from] ultrakfp::Error),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Structure(_) => EXIT_STRUCTURE,
            CliError::Runtime(_) | CliError::Io(_) => EXIT_RUNTIME,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Structure(_) => "structure",
            CliError::Runtime(_) => "runtime",
            CliError::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Checks and artifacts gathered by a command; names are unique.
#[derive(Debug, Default)]
pub struct Outcome {
    checks: Vec<Check>,
    names: BTreeSet<String>,
    artifacts: Vec<String>,
}

impl Outcome {
    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        let name = name.into();
        assert!(self.names.insert(name.clone()), "check {name} recorded twice");
        self.checks.push(Check {
            name,
            passed,
            detail: detail.into(),
        });
    }

    pub fn artifact(&mut self, path: impl Into<String>) {
        self.artifacts.push(path.into());
    }

    pub fn checks(&self) -> &[Check] {
        &self.checks
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn config_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// The single report of a run. Keys are sorted on output.
pub struct RunReport<'a> {
    pub command: &'a str,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub wall_time_s: f64,
    pub outcome: &'a Outcome,
    pub error: Option<&'a CliError>,
}

impl RunReport<'_> {
    pub fn exit_code(&self) -> i32 {
        match self.error {
            Some(e) => e.exit_code(),
            None if self.outcome.all_passed() => EXIT_OK,
            None => EXIT_CHECK,
        }
    }

    pub fn to_value(&self) -> Value {
        let status = match (self.error, self.outcome.all_passed()) {
            (Some(_), _) => "error",
            (None, true) => "ok",
            (None, false) => "check_failed",
        };
        serde_json::json!({
            "command": self.command,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "wall_time_s": self.wall_time_s,
            "status": status,
            "exit_code": self.exit_code(),
            "checks": self.outcome.checks,
            "artifacts": self.outcome.artifacts,
            "error": self.error.map(|e| serde_json::json!({"kind": e.kind(), "message": e.to_string()})),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("report.json"), &self.to_value())
    }
}

/// Pretty JSON with sorted keys and a trailing newline.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let v = serde_json::to_value(value)?;
    let mut text = serde_json::to_string_pretty(&v)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
