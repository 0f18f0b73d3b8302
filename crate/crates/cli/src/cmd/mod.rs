use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

pub mod ablate;
pub mod build;
pub mod eval;
pub mod stats;
pub mod synth;
pub mod viz;

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

pub fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>, CliError> {
    fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

pub fn or_default(path: Option<PathBuf>, default: &str) -> PathBuf {
    path.unwrap_or_else(|| PathBuf::from(default))
}

pub fn require<T>(value: Option<T>, key: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Config {
        message: format!("--{key} is required"),
        keys: vec![key.to_string()],
    })
}

pub fn invalid(key: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        message: format!("--{key}: {}", message.into()),
        keys: vec![key.to_string()],
    }
}

/// Fraction labels used in file names, e.g. `0.25` becomes `f0.250`.
pub fn fraction_tag(f: f64) -> String {
    format!("f{f:.3}")
}
