//! Artifact names and file helpers.

use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const HV_DIR: &str = "hv";
pub const DSE_SUMMARY_FILE: &str = "dse_summary.csv";
pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const RM_FILE: &str = "rm.json";
pub const RM_ACCURACY_FILE: &str = "rm_accuracy.csv";
pub const GRPO_TELEMETRY_FILE: &str = "grpo_telemetry.csv";
pub const ROUTER_TELEMETRY_FILE: &str = "router_telemetry.csv";
pub const POLICY_FILE: &str = "policy.json";
pub const RM_ONLINE_FILE: &str = "rm_online.json";
pub const REPLAY_BUFFER_FILE: &str = "replay_buffer.jsonl";
pub const COST_REPORT_FILE: &str = "cost_report.txt";
pub const TRIGGER_WINDOWS_FILE: &str = "trigger_windows.csv";
pub const RQ_TREND_FILE: &str = "rq_trend.csv";
pub const REPORT_FILE: &str = "report.txt";

/// Read a required input; a missing file maps to the missing-input exit code.
pub fn read_input(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => CliError::missing(path, "no such file"),
        _ => CliError::Io { path: path.to_path_buf(), source: e },
    })
}

/// Like [`read_input`] but a missing file is `None`.
pub fn read_optional(path: &Path) -> Result<Option<String>> {
    match std::fs::read_to_string(path) {
        Ok(s) => Ok(Some(s)),
        Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
        Err(e) => Err(CliError::Io { path: path.to_path_buf(), source: e }),
    }
}

/// Write `contents`, creating parent directories.
pub fn write_output(path: &Path, contents: &str) -> Result<()> {
    let io = |e| CliError::Io { path: path.to_path_buf(), source: e };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, contents).map_err(io)
}

pub fn artifact(out: &Path, name: &str) -> PathBuf {
    out.join(name)
}
