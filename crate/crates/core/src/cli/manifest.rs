use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::CliError;

pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Everything needed to rerun a command: resolved settings, input digests,
/// and digests of the artifacts it wrote (paths relative to the run directory).
///
/// Written as `key=value` lines, so it can be fed back through `--config`.
#[derive(Debug, Default)]
pub struct RunManifest {
    pub command: String,
    pub config: Vec<(String, String)>,
    pub inputs: Vec<(String, String)>,
    pub artifacts: Vec<(String, String)>,
    /// Files whose content includes wall-clock time and is therefore not digested.
    pub timing: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: Vec<(String, String)>) -> Self {
        Self {
            command: command.to_string(),
            config,
            ..Self::default()
        }
    }

    pub fn add_input(&mut self, label: &str, path: &Path) -> Result<(), CliError> {
        self.inputs.push((label.to_string(), sha256_file(path)?));
        Ok(())
    }

    pub fn add_artifact(&mut self, run_dir: &Path, name: &str) -> Result<(), CliError> {
        self.artifacts
            .push((name.to_string(), sha256_file(&run_dir.join(name))?));
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "run.command={}", self.command);
        let _ = writeln!(out, "run.version={}", env!("CARGO_PKG_VERSION"));
        for (k, v) in &self.config {
            let _ = writeln!(out, "{k}={v}");
        }
        for (k, v) in &self.inputs {
            let _ = writeln!(out, "input.{k}.sha256={v}");
        }
        for (k, v) in &self.artifacts {
            let _ = writeln!(out, "artifact.{k}.sha256={v}");
        }
        for name in &self.timing {
            let _ = writeln!(out, "run.timing={name}");
        }
        out
    }

    pub fn write(&self, run_dir: &Path) -> Result<(), CliError> {
        let path = run_dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.render())
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
    }
}
