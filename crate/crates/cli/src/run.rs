//! Run directories: every file written through `RunDir` is hashed and listed
//! in `manifest.json` when the run finishes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_sha256: &'a str,
    config_source: Option<&'a FileEntry>,
    outputs: &'a [FileEntry],
    seconds: f64,
    extra: &'a serde_json::Value,
}

pub struct RunDir {
    root: PathBuf,
    command: &'static str,
    seed: u64,
    config_sha256: String,
    config_source: Option<FileEntry>,
    outputs: Vec<FileEntry>,
    started: Instant,
    pub extra: serde_json::Value,
}

pub fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

impl RunDir {
    /// Creates `root` and writes the effective configuration into it.
    pub fn create(
        root: PathBuf,
        command: &'static str,
        seed: u64,
        config_toml: &str,
        config_source: Option<(&Path, &[u8])>,
    ) -> Result<Self, CliError> {
        fs::create_dir_all(&root).map_err(|e| io_error(&root, e))?;
        let mut dir = Self {
            root,
            command,
            seed,
            config_sha256: sha256_hex(config_toml.as_bytes()),
            config_source: config_source.map(|(p, bytes)| FileEntry {
                file: p.display().to_string(),
                bytes: bytes.len(),
                sha256: sha256_hex(bytes),
            }),
            outputs: Vec::new(),
            started: Instant::now(),
            extra: serde_json::Value::Null,
        };
        dir.write("config.toml", config_toml.as_bytes())?;
        Ok(dir)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let mut f = fs::File::create(&path).map_err(|e| io_error(&path, e))?;
        f.write_all(bytes).map_err(|e| io_error(&path, e))?;
        self.outputs.retain(|o| o.file != name);
        self.outputs.push(FileEntry {
            file: name.to_string(),
            bytes: bytes.len(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    /// Writes `manifest.json` and returns its path.
    pub fn finish(self) -> Result<PathBuf, CliError> {
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            config_sha256: &self.config_sha256,
            config_source: self.config_source.as_ref(),
            outputs: &self.outputs,
            seconds: self.started.elapsed().as_secs_f64(),
            extra: &self.extra,
        };
        let path = self.path("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
        fs::write(&path, text).map_err(|e| io_error(&path, e))?;
        Ok(path)
    }
}
