//! Run manifests: what was run, on which inputs, producing which files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    /// Git blob object id in the SHA-256 object format.
    pub blob: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: Option<toml::Table>,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    pub started: String,
    pub finished: String,
    pub version: String,
}

/// `sha256("blob <len>\0" ++ content)`, as `git hash-object` computes it in a
/// SHA-256 repository.
pub fn git_blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    format!("{:x}", h.finalize())
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn entry(path: &Path, label: String) -> Result<FileEntry, CliError> {
    let content = std::fs::read(path).map_err(CliError::io(path))?;
    Ok(FileEntry {
        path: label,
        bytes: content.len() as u64,
        blob: git_blob_hash(&content),
    })
}

pub struct ManifestBuilder {
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn start(command: &str) -> Self {
        Self {
            manifest: RunManifest {
                command: command.to_string(),
                args: std::env::args().skip(1).collect(),
                config: None,
                seeds: Vec::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                started: now(),
                finished: String::new(),
                version: env!("CARGO_PKG_VERSION").to_string(),
            },
        }
    }

    pub fn config(&mut self, config: &crate::config::RunConfig) {
        self.manifest.config = Some(toml::Table::try_from(config).expect("config serializes"));
        self.manifest.seeds = config.train.seeds.clone();
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let e = entry(path, path.display().to_string())?;
        self.manifest.inputs.push(e);
        Ok(())
    }

    /// Records `path`, listed relative to `root`.
    pub fn output(&mut self, root: &Path, path: &Path) -> Result<(), CliError> {
        let label = path.strip_prefix(root).unwrap_or(path).display().to_string();
        let e = entry(path, label)?;
        self.manifest.outputs.push(e);
        Ok(())
    }

    pub fn finish(mut self, path: &Path) -> Result<PathBuf, CliError> {
        self.manifest.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        self.manifest.finished = now();
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(CliError::io(path))?;
        Ok(path.to_path_buf())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_blob_hash_matches_git() {
        // `git init --object-format=sha256 && git hash-object -t blob /dev/null`
        assert_eq!(
            git_blob_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
        assert_eq!(
            git_blob_hash(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
    }
}
