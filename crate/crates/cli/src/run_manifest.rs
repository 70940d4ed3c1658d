use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::{CliError, CliResult};

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Seconds since the Unix epoch.
    pub started_at: f64,
    pub finished_at: Option<f64>,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    pub fn start(command: &str, argv: Vec<String>, config: serde_json::Value, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            argv,
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_at: now(),
            finished_at: None,
        }
    }

    pub fn finish_into(&mut self, dir: &Path) -> CliResult<()> {
        self.finish_to(&dir.join(RUN_MANIFEST_FILE))
    }

    pub fn finish_to(&mut self, path: &Path) -> CliResult<()> {
        self.finished_at = Some(now());
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::data(format!("cannot encode run manifest: {e}")))?;
        std::fs::write(path, text + "\n")
            .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
    }
}
