//! Output layout and provenance. JSON artifacts are wrapped with the config
//! hash and seed; text, CSV and checkpoint files are listed with their
//! SHA-256 in the manifest of the command that wrote them. Wall-clock
//! timestamps only go to the `run.log` sidecar.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use convbias_core::lm::{MANIFEST_FILE, WEIGHTS_FILE};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const LOG_FILE: &str = "run.log";
pub const PROVENANCE_FILE: &str = "provenance.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub config_hash: String,
    pub seed: u64,
    pub data: T,
}

/// Per-command record of what was written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest<T> {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// Paths relative to the output directory, mapped to SHA-256.
    pub files: BTreeMap<String, String>,
    pub summary: T,
}

/// Paths inside the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn queries(&self) -> PathBuf {
        self.root.join("queries.txt")
    }

    pub fn prepare_dir(&self) -> PathBuf {
        self.root.join("prepare")
    }

    pub fn annotations(&self) -> PathBuf {
        self.prepare_dir().join("annotations.csv")
    }

    pub fn split(&self) -> PathBuf {
        self.prepare_dir().join("split.json")
    }

    pub fn corpus(&self) -> PathBuf {
        self.prepare_dir().join("corpus.txt")
    }

    pub fn references(&self) -> PathBuf {
        self.prepare_dir().join("references.txt")
    }

    pub fn dst(&self) -> PathBuf {
        self.prepare_dir().join("dst.json")
    }

    pub fn crg(&self) -> PathBuf {
        self.prepare_dir().join("crg.json")
    }

    pub fn checkpoint(&self, tag: &str) -> PathBuf {
        self.root.join("checkpoints").join(tag)
    }

    pub fn debias_record(&self, tag: &str) -> PathBuf {
        self.root.join("debias").join(format!("{tag}.json"))
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn manifest(&self, command: &str) -> PathBuf {
        self.root.join(format!("{command}.manifest.json"))
    }

    /// `path` relative to the root, with forward slashes.
    pub fn relative(&self, path: &Path) -> String {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        rel.components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/")
    }
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    ensure_parent(path)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// One line per entry, each terminated by a newline.
pub fn write_lines<S: AsRef<str>>(path: &Path, lines: &[S]) -> CliResult<()> {
    let mut text = String::new();
    for l in lines {
        text.push_str(l.as_ref());
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn read_lines(path: &Path) -> CliResult<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::validation(format!("malformed {}: {e}", path.display())))
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// SHA-256 over the checkpoint manifest followed by its weights.
pub fn checkpoint_hash(dir: &Path) -> CliResult<String> {
    let mut h = Sha256::new();
    for name in [MANIFEST_FILE, WEIGHTS_FILE] {
        let p = dir.join(name);
        h.update(fs::read(&p).with_context(|| format!("hashing {}", p.display()))?);
    }
    Ok(hex::encode(h.finalize()))
}

/// Appends a timestamped line to the sidecar log.
pub fn log_event(root: &Path, command: &str, message: &str) -> CliResult<()> {
    fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    let ts = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let path = root.join(LOG_FILE);
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .with_context(|| format!("opening {}", path.display()))?;
    writeln!(f, "{ts}\t{command}\t{message}").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
