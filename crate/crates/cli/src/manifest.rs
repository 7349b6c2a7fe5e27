//! Run manifests: everything needed to re-run a command, written next to its outputs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rjm::{io, FitConfig};
use serde::Serialize;

use crate::error::CliResult;

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// Command-line arguments after the program name.
    pub args: Vec<String>,
    pub config: Option<FitConfig>,
    /// Command-specific settings and derived facts (e.g. train/test sizes).
    pub settings: serde_json::Value,
    pub input_paths: Vec<String>,
    pub output_paths: Vec<String>,
    pub seed: u64,
    pub wall_time_s: f64,
    pub library_version: String,
    pub notes: Vec<String>,
}

pub struct ManifestBuilder {
    started: Instant,
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            started: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                args: std::env::args().skip(1).collect(),
                config: None,
                settings: serde_json::Value::Null,
                input_paths: Vec::new(),
                output_paths: Vec::new(),
                seed,
                wall_time_s: 0.0,
                library_version: rjm::VERSION.to_string(),
                notes: Vec::new(),
            },
        }
    }

    pub fn config(&mut self, config: &FitConfig) -> &mut Self {
        self.manifest.config = Some(config.clone());
        self
    }

    pub fn settings(&mut self, settings: serde_json::Value) -> &mut Self {
        self.manifest.settings = settings;
        self
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.manifest.input_paths.push(path.display().to_string());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.manifest.output_paths.push(path.display().to_string());
        self
    }

    pub fn note(&mut self, note: impl Into<String>) -> &mut Self {
        self.manifest.notes.push(note.into());
        self
    }

    /// Stamps the elapsed time and writes the manifest atomically.
    pub fn write(mut self, path: &Path) -> CliResult<RunManifest> {
        self.manifest.wall_time_s = self.started.elapsed().as_secs_f64();
        io::write_json_atomic(path, &self.manifest)?;
        Ok(self.manifest)
    }
}

/// `dir/model.json` + `"labels.csv"` -> `dir/model.labels.csv`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sibling_replaces_extension() {
        assert_eq!(sibling(Path::new("out/model.json"), "labels.csv"), PathBuf::from("out/model.labels.csv"));
        assert_eq!(sibling(Path::new("sel.csv"), "manifest.json"), PathBuf::from("sel.manifest.json"));
    }
}
