use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::io::write_json;
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Record of one run: enough to replay it and find everything it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub subcommand: String,
    /// Fully resolved arguments; replaying feeds these back unchanged.
    pub config: serde_json::Value,
    pub master_seed: Option<u64>,
    pub artifact_version: String,
    /// Data files written, relative to the output directory.
    pub outputs: Vec<String>,
    pub exit_code: u8,
    pub duration_secs: f64,
}

impl RunManifest {
    pub fn write(&self, out: &Path) -> Result<(), CliError> {
        write_json(&out.join(MANIFEST_FILE), self)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let body = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let m: Self = serde_json::from_str(&body).map_err(|e| CliError::io(path, e))?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(CliError::input(format!(
                "{}: manifest schema {} is not supported (expected {MANIFEST_SCHEMA_VERSION})",
                path.display(),
                m.schema_version
            )));
        }
        Ok(m)
    }
}
