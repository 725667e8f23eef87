//! Output directories and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use riemann_ssvep::{Error, Result};
use serde::Serialize;
use serde_json::Value;

pub const RUN_FILE: &str = "run.json";

/// Creates `dir`, refusing to reuse a non-empty one unless `force` is set.
pub fn prepare(dir: &Path, force: bool) -> Result<PathBuf> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(Error::Validation(format!(
                "output path {} exists and is not a directory",
                dir.display()
            )));
        }
        let mut entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() && !force {
            return Err(Error::Validation(format!(
                "output directory {} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir.to_path_buf())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Validation(format!("cannot serialize report: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json(value)?)
}

pub fn to_value<T: Serialize>(value: &T) -> Result<Value> {
    serde_json::to_value(value)
        .map_err(|e| Error::Validation(format!("cannot serialize config: {e}")))
}

/// Everything needed to re-run a command: its name, seed, resolved
/// configuration and inputs, plus the files it wrote (relative to the
/// output directory). Thread count and output path are deliberately left
/// out so that the manifest itself is reproducible.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub inputs: Value,
    pub config: Value,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &'static str, seed: u64, inputs: Value, config: Value) -> Self {
        RunManifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            inputs,
            config,
            artifacts: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(RUN_FILE), self)
    }
}

/// Formats an optional number as a CSV cell.
pub fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
