use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::Invocation;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "ctae-run-manifest";
pub const MANIFEST_MAJOR: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path, recorded_as: PathBuf) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Self {
            path: recorded_as,
            sha256: sha256_hex(&bytes),
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitStatus {
    pub code: i32,
    pub error: Option<String>,
}

/// Record of one command execution; enough to run it again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub major: u32,
    pub tool_version: String,
    pub command: String,
    /// Config file named on the command line, if any. The resolved values
    /// live in `invocation`.
    pub config_path: Option<PathBuf>,
    pub invocation: Invocation,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    /// Relative to `run_dir`.
    pub outputs: Vec<FileDigest>,
    pub run_dir: PathBuf,
    pub started: String,
    pub finished: String,
    pub exit: ExitStatus,
    /// Manifest this run re-executed, for replays.
    pub replay_of: Option<PathBuf>,
    /// Command-specific facts worth keeping next to the outputs.
    pub details: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let head: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if head.get("format").and_then(|v| v.as_str()) != Some(MANIFEST_FORMAT) {
            bail!("{} is not a run manifest", path.display());
        }
        match head.get("major").and_then(|v| v.as_u64()) {
            Some(m) if m == u64::from(MANIFEST_MAJOR) => {}
            other => bail!("{}: unsupported manifest version {other:?}", path.display()),
        }
        Ok(serde_json::from_value(head)?)
    }
}

/// `root/<UTC timestamp>-<hash>`, with a numeric suffix if that exists.
pub fn fresh_run_dir(root: &Path, stamp: &str, hash: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    let base = format!("{stamp}-{hash}");
    let mut candidate = root.join(&base);
    let mut n = 1;
    while candidate.exists() {
        n += 1;
        candidate = root.join(format!("{base}-{n}"));
    }
    std::fs::create_dir(&candidate).with_context(|| format!("creating {}", candidate.display()))?;
    Ok(candidate)
}
