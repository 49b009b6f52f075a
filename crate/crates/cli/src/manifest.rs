//! Run manifests and rerun detection.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    /// Input label to SHA-256 of the file contents.
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    /// Unix seconds; taken from SOURCE_DATE_EPOCH when set.
    pub started: u64,
    pub finished: Option<u64>,
    pub exit_code: Option<i32>,
    /// Path relative to the output directory to SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    fn same_run(&self, other: &RunManifest) -> bool {
        self.command == other.command
            && self.config_hash == other.config_hash
            && self.inputs == other.inputs
            && self.seed == other.seed
            && self.version == other.version
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

fn timestamp() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.trim().parse().ok()) {
        return t;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Files under `dir` except the manifest, as sorted `/`-separated paths.
fn list_files(dir: &Path) -> Result<Vec<String>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
        for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("walk stays under root");
                let parts: Vec<_> = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect();
                out.push(parts.join("/"));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.retain(|p| p != MANIFEST);
    out.sort();
    Ok(out)
}

fn read_manifest(dir: &Path) -> Option<RunManifest> {
    let text = fs::read_to_string(dir.join(MANIFEST)).ok()?;
    serde_json::from_str(&text).ok()
}

fn outputs_intact(dir: &Path, m: &RunManifest) -> bool {
    m.outputs
        .iter()
        .all(|(rel, hash)| hash_file(&dir.join(rel)).is_ok_and(|h| &h == hash))
}

fn clear_dir(dir: &Path) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            fs::remove_dir_all(&path)?;
        } else {
            fs::remove_file(&path)?;
        }
    }
    Ok(())
}

/// What a command should do with its output directory.
#[allow(clippy::large_enum_variant)]
pub enum Plan {
    /// A finished run with the same inputs exists; its exit code.
    UpToDate(i32),
    Run(Run),
}

/// A run in progress. The manifest is written at the start, marked
/// unfinished, so an interrupted run can be resumed.
pub struct Run {
    dir: PathBuf,
    manifest: RunManifest,
    pub resumed: bool,
}

/// Decides whether to skip, resume or start a run in `dir`.
///
/// A directory holding a manifest of a different run is cleared. A non-empty
/// directory without a manifest is only reused with `force`.
pub fn plan(
    dir: &Path,
    command: &str,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    seed: Option<u64>,
    force: bool,
) -> Result<Plan> {
    let config_hash = sha256_hex(serde_json::to_string(&config)?.as_bytes());
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config_hash,
        config,
        inputs,
        seed,
        started: timestamp(),
        finished: None,
        exit_code: None,
        outputs: BTreeMap::new(),
        warnings: Vec::new(),
    };
    let mut resumed = false;
    if dir.exists() {
        if !dir.is_dir() {
            bail!("{} exists and is not a directory", dir.display());
        }
        match read_manifest(dir) {
            Some(old) if !force && old.same_run(&manifest) => match old.exit_code {
                Some(code) if outputs_intact(dir, &old) => return Ok(Plan::UpToDate(code)),
                Some(_) => clear_dir(dir)?,
                None => resumed = true,
            },
            Some(_) => clear_dir(dir)?,
            None => {
                let occupied = fs::read_dir(dir)?.next().is_some();
                if occupied && !force {
                    bail!(
                        "{} is not empty and holds no run manifest; pass --force to write into it",
                        dir.display()
                    );
                }
            }
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let run = Run {
        dir: dir.to_path_buf(),
        manifest,
        resumed,
    };
    run.write()?;
    Ok(Plan::Run(run))
}

impl Run {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write(&self) -> Result<()> {
        let path = self.dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    /// Hashes every file in the directory and records the outcome.
    pub fn finish(mut self, exit_code: i32, warnings: Vec<String>) -> Result<i32> {
        let mut outputs = BTreeMap::new();
        for rel in list_files(&self.dir)? {
            outputs.insert(rel.clone(), hash_file(&self.dir.join(&rel))?);
        }
        self.manifest.outputs = outputs;
        self.manifest.warnings = warnings;
        self.manifest.exit_code = Some(exit_code);
        self.manifest.finished = Some(timestamp());
        self.write()?;
        Ok(exit_code)
    }
}
