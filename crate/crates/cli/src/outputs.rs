//! Small helpers for writing deterministic text artifacts.

use std::fs;
use std::path::Path;

use crate::error::{io_data_err, CliError};

pub fn write_text(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_data_err("creating output dir", e))?;
    }
    fs::write(path, content).map_err(|e| io_data_err(&format!("writing {}", path.display()), e))
}

/// Shortest round-trip decimal form; stable across runs of the same binary.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_f32(v: f32) -> String {
    format!("{v}")
}
