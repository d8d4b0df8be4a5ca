//! Output helpers: provenance block, CSV tables, atomic writes.

use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use diffreg_core::config::RunConfig;
use diffreg_core::io::{write_atomic, write_json_atomic};

use crate::CliError;

/// Embedded in every output: tool, version, command and the merged config.
pub fn provenance(command: &str, config: &RunConfig) -> Value {
    json!({
        "tool": "diffreg",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_json_atomic(path, value).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// CSV with a header row; the provenance goes into a `# provenance:` first line.
pub fn write_csv(path: &Path, provenance: &Value, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut text = format!("# provenance: {}\n", serde_json::to_string(provenance).expect("value serializes"));
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes()).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Writes pre-rendered CSV text prefixed with the provenance line.
pub fn write_csv_text(path: &Path, provenance: &Value, body: &str) -> Result<(), CliError> {
    let text = format!("# provenance: {}\n{body}", serde_json::to_string(provenance).expect("value serializes"));
    write_atomic(path, text.as_bytes()).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn num(v: f64) -> String {
    v.to_string()
}
