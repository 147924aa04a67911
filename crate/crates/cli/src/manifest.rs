use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct FileEntry {
    /// Relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Record of one invocation and everything it wrote.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: Option<String>,
    pub scenario: Option<String>,
    pub seed: u64,
    pub out_dir: String,
    pub version: String,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn new(command: &str, argv: &[String], out: &Path, seed: u64) -> Self {
        Manifest {
            command: command.to_string(),
            argv: argv.to_vec(),
            config: None,
            scenario: None,
            seed,
            out_dir: out.display().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            files: Vec::new(),
        }
    }

    pub fn add_files(&mut self, out: &Path, files: &[PathBuf]) -> anyhow::Result<()> {
        for f in files {
            let data = std::fs::read(f).with_context(|| format!("reading {}", f.display()))?;
            let rel = f.strip_prefix(out).unwrap_or(f);
            self.files.push(FileEntry {
                path: rel.to_string_lossy().replace('\\', "/"),
                bytes: data.len() as u64,
                sha256: hex::encode(Sha256::digest(&data)),
            });
        }
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(())
    }

    pub fn write(&self, out: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let path = out.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
