//! Run manifests: what a command read, what it wrote, and content hashes of
//! both, so later commands can detect tampered inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dyntta::checkpoint::write_atomic;
use dyntta::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    /// Effective settings, as text.
    pub config: String,
    pub seeds: Vec<u64>,
    /// Input path → content hash.
    pub inputs: BTreeMap<String, String>,
    /// Output path (relative to the run directory) → content hash.
    pub outputs: BTreeMap<String, String>,
    pub duration_secs: f64,
}

/// SHA-256 of a file, or of the sorted `(relative path, hash)` list of every
/// file under a directory.
pub fn hash_path(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        files.sort();
        let mut h = Sha256::new();
        for rel in files {
            let digest = hash_path(&path.join(&rel))?;
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0]);
            h.update(digest.as_bytes());
            h.update(*b"\n");
        }
        Ok(hex::encode(h.finalize()))
    } else {
        Ok(hex::encode(Sha256::digest(fs::read(path)?)))
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else if p.file_name().is_some_and(|n| n != MANIFEST) {
            out.push(p.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            what: "run manifest",
            detail: e.to_string(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(&dir.join(MANIFEST), text.as_bytes())
    }

    /// Recomputes the hash of every recorded output under `dir`.
    pub fn verify_outputs(&self, dir: &Path) -> Result<()> {
        for (rel, want) in &self.outputs {
            let got = hash_path(&dir.join(rel))?;
            if &got != want {
                return Err(Error::Integrity(format!(
                    "`{}` does not match the hash recorded by `{}`",
                    dir.join(rel).display(),
                    self.command
                )));
            }
        }
        Ok(())
    }
}

/// If `path` lies in a run directory, checks it (or the recorded output
/// containing it) against that run's manifest.
pub fn check_input(path: &Path) -> Result<()> {
    let mut dir = if path.is_dir() { Some(path) } else { path.parent() };
    while let Some(d) = dir {
        if d.join(MANIFEST).is_file() {
            let m = RunManifest::load(d)?;
            let rel = path.strip_prefix(d).expect("ancestor");
            if rel.as_os_str().is_empty() {
                return m.verify_outputs(d);
            }
            for (out, want) in &m.outputs {
                if rel.starts_with(out) && &hash_path(&d.join(out))? != want {
                    return Err(Error::Integrity(format!(
                        "`{}` does not match the hash recorded by `{}`",
                        d.join(out).display(),
                        m.command
                    )));
                }
            }
            return Ok(());
        }
        dir = d.parent();
    }
    Ok(())
}

/// Creates the run directory, refusing to reuse a non-empty one unless
/// `force` is set.
pub fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)?.next().is_some();
        if occupied && !force {
            return Err(Error::Contract(format!(
                "output directory `{}` is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
        if occupied {
            fs::remove_dir_all(dir)?;
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}
