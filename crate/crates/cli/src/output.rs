use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use quadland::io::{write_dataset_csv, write_matrix_csv};
use quadland::Dataset;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Files written into one run directory. Everything except the manifest's
/// `created_unix` field is a function of the resolved config.
pub struct Artifacts {
    dir: PathBuf,
    written: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    tool_version: &'static str,
    config: &'a ExperimentConfig,
    artifacts: &'a [String],
    created_unix: u64,
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("cannot write {}: {e}", path.display()))
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value).expect("serializable artifact") + "\n";
        fs::write(&path, text).map_err(|e| io_error(&path, e))
    }

    pub fn jsonl<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let path = self.path(name);
        let text: String = rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("serializable row") + "\n")
            .collect();
        fs::write(&path, text).map_err(|e| io_error(&path, e))
    }

    pub fn matrix(&mut self, name: &str, m: &DMatrix<f64>) -> Result<(), CliError> {
        let path = self.path(name);
        write_matrix_csv(&path, m).map_err(|e| io_error(&path, e))
    }

    pub fn dataset(&mut self, name: &str, ds: &Dataset) -> Result<(), CliError> {
        let path = self.path(name);
        write_dataset_csv(&path, ds).map_err(|e| io_error(&path, e))
    }

    pub fn finish(mut self, config: &ExperimentConfig) -> Result<(), CliError> {
        let created_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let artifacts = std::mem::take(&mut self.written);
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION"),
            config,
            artifacts: &artifacts,
            created_unix,
        };
        let path = self.dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("serializable manifest") + "\n";
        fs::write(&path, text).map_err(|e| io_error(&path, e))
    }
}
