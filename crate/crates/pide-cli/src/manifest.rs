//! Deterministic run artifacts: every command writes its outputs plus a
//! manifest recording the effective config, its hash, the seed, and the
//! SHA-256 of each output file. Files marked volatile (wall-clock fields)
//! are listed but not hashed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Serialize)]
pub struct OutputRecord {
    pub path: String,
    pub bytes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub volatile: bool,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub crate_version: String,
    pub seed: u64,
    pub threads: usize,
    pub config_hash: String,
    pub outputs: Vec<OutputRecord>,
    pub config_echo: serde_json::Value,
}

pub struct RunDir {
    dir: PathBuf,
    manifest: Manifest,
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(2 * bytes.len());
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

impl RunDir {
    pub fn create(
        dir: &Path,
        command: &str,
        config: &RunConfig,
        seed: u64,
        threads: usize,
    ) -> Result<RunDir, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))?;
        let echo = serde_json::to_value(config)
            .map_err(|e| CliError::numeric(format!("config echo: {e}")))?;
        let canonical = serde_json::to_string(&echo)
            .map_err(|e| CliError::numeric(format!("config echo: {e}")))?;
        let config_hash = hex(&Sha256::digest(canonical.as_bytes()));
        Ok(RunDir {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                command: command.to_string(),
                crate_version: env!("CARGO_PKG_VERSION").to_string(),
                seed,
                threads,
                config_hash,
                outputs: Vec::new(),
                config_echo: echo,
            },
        })
    }

    /// Writes a deterministic (hashed) artifact.
    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<(), CliError> {
        self.write_impl(name, contents, false)
    }

    /// Writes an artifact containing volatile fields (listed, not hashed).
    pub fn write_volatile(&mut self, name: &str, contents: &[u8]) -> Result<(), CliError> {
        self.write_impl(name, contents, true)
    }

    fn write_impl(&mut self, name: &str, contents: &[u8], volatile: bool) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents)
            .map_err(|e| CliError::numeric(format!("cannot write {}: {e}", path.display())))?;
        self.manifest.outputs.push(OutputRecord {
            path: name.to_string(),
            bytes: contents.len(),
            sha256: (!volatile).then(|| hex(&Sha256::digest(contents))),
            volatile,
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::numeric(format!("serializing {name}: {e}")))?;
        self.write(name, text.as_bytes())
    }

    pub fn write_json_volatile<T: Serialize>(
        &mut self,
        name: &str,
        value: &T,
    ) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::numeric(format!("serializing {name}: {e}")))?;
        self.write_volatile(name, text.as_bytes())
    }

    /// Finalizes the run by writing manifest.json.
    pub fn finish(self) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| CliError::numeric(format!("manifest: {e}")))?;
        let path = self.dir.join("manifest.json");
        fs::write(&path, text)
            .map_err(|e| CliError::numeric(format!("cannot write manifest: {e}")))?;
        Ok(())
    }
}
