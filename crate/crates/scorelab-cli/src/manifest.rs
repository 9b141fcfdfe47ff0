//! Run manifests: every subcommand that writes outputs drops a manifest next
//! to them with the resolved configuration, all seeds, input hashes and the
//! binary version, so a run can be reproduced from the manifest alone.

use anyhow::{Context, Result};
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<String>,
}

#[derive(Serialize)]
pub struct InputHash {
    pub path: String,
    pub fnv1a: String,
}

pub fn input_hash(path: &Path) -> Result<InputHash> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(InputHash {
        path: path.display().to_string(),
        fnv1a: scorelab::io::fnv1a_hex(&bytes),
    })
}

/// Manifest path for an output file: `samples.csv` -> `samples.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

pub fn write_manifest(out: &Path, manifest: &Manifest) -> Result<()> {
    let path = manifest_path(out);
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Applies the output-dir override (`SCORELAB_OUT_DIR`) to relative paths.
pub fn resolve_out(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os("SCORELAB_OUT_DIR") {
        Some(dir) => PathBuf::from(dir).join(path),
        None => path.to_path_buf(),
    }
}
