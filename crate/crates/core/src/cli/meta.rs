use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Result, SagaError};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| SagaError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Run metadata: command line, resolved config, hashed inputs and outputs.
#[derive(Clone, Debug, Default)]
pub struct Metadata {
    pub command_line: String,
    pub config: String,
    pub inputs: Vec<(String, PathBuf, String)>,
    pub outputs: Vec<PathBuf>,
    pub notes: Vec<(String, String)>,
}

impl Metadata {
    pub fn new(command_line: &str, config: &RunConfig) -> Self {
        Metadata {
            command_line: command_line.to_string(),
            config: config.echo(),
            ..Metadata::default()
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        let h = sha256_file(path)?;
        self.inputs.push((role.to_string(), path.to_path_buf(), h));
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.push((key.to_string(), value.to_string()));
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("command={}\n[config]\n{}[inputs]\n", self.command_line, self.config);
        for (role, path, hash) in &self.inputs {
            let _ = writeln!(out, "{role}={} sha256={hash}", path.display());
        }
        out.push_str("[outputs]\n");
        for p in &self.outputs {
            let _ = writeln!(out, "{}", p.display());
        }
        if !self.notes.is_empty() {
            out.push_str("[results]\n");
            for (k, v) in &self.notes {
                let _ = writeln!(out, "{k}={v}");
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| SagaError::io(path, e))
    }
}
