use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Outcome of one replica.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub ok: bool,
    pub error: Option<String>,
    pub wall_ms: f64,
    pub files: Vec<String>,
}

/// One named pass/fail check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    /// Hex SHA-256 of the config file bytes.
    pub config_hash: String,
    pub csv_schema_version: u32,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunRecord>,
    pub checks: Vec<Check>,
    /// Every file written, relative to the output directory. The manifest
    /// itself is not listed.
    pub files: Vec<String>,
    pub wall_ms: f64,
}

impl RunManifest {
    /// True when every replica finished and every check passed.
    pub fn passed(&self) -> bool {
        self.runs.iter().all(|r| r.ok) && self.checks.iter().all(|c| c.pass)
    }
}

pub fn config_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
