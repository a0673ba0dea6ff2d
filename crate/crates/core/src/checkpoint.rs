//! Checkpoints: a JSON manifest next to a little-endian `f32` blob.
//!
//! `model.json` describes every tensor (name, shape, byte offset) plus free
//! string metadata; `model.bin` holds the raw data. The manifest records the
//! blob's SHA-256 so a swapped or truncated blob is caught on load.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::params::ParamSet;

pub const FORMAT: &str = "dyntta-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub model: String,
    pub meta: BTreeMap<String, String>,
    pub parameter_count: usize,
    pub tensors: Vec<TensorEntry>,
    pub blob: String,
    pub blob_sha256: String,
}

impl Manifest {
    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::format("checkpoint", format!("missing metadata `{key}`")))
    }
}

/// Blob path paired with a manifest path.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("`{}` is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save(path: &Path, model: &str, meta: BTreeMap<String, String>, params: &ParamSet) -> Result<()> {
    let mut blob = Vec::with_capacity(params.numel() * 4);
    let mut tensors = Vec::with_capacity(params.len());
    for (name, t) in params.iter() {
        let offset = blob.len();
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
            bytes: blob.len() - offset,
        });
    }
    let bin = blob_path(path);
    if bin == path {
        return Err(Error::invalid(format!(
            "checkpoint manifest `{}` would collide with its `.bin` blob",
            path.display()
        )));
    }
    let manifest = Manifest {
        format: FORMAT.to_string(),
        model: model.to_string(),
        meta,
        parameter_count: params.numel(),
        tensors,
        blob: bin
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        blob_sha256: hex::encode(Sha256::digest(&blob)),
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::format("checkpoint", e.to_string()))?;
    write_atomic(&bin, &blob)?;
    write_atomic(path, &json)
}

pub fn load(path: &Path) -> Result<(Manifest, ParamSet)> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(path)?)
        .map_err(|e| Error::format("checkpoint", format!("{}: {e}", path.display())))?;
    if manifest.format != FORMAT {
        return Err(Error::format(
            "checkpoint",
            format!("unsupported format `{}`", manifest.format),
        ));
    }
    let bin = path.with_file_name(&manifest.blob);
    let blob = fs::read(&bin)?;
    if hex::encode(Sha256::digest(&blob)) != manifest.blob_sha256 {
        return Err(Error::Integrity(format!(
            "blob `{}` does not match the manifest hash",
            bin.display()
        )));
    }
    let mut params = ParamSet::new();
    for e in &manifest.tensors {
        let end = e.offset + e.bytes;
        if end > blob.len() || e.bytes % 4 != 0 {
            return Err(Error::format(
                "checkpoint",
                format!("tensor `{}` out of bounds", e.name),
            ));
        }
        let data = blob[e.offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let t = Tensor::new(e.shape.clone(), data)
            .map_err(|err| Error::format("checkpoint", format!("tensor `{}`: {err}", e.name)))?;
        params.push(e.name.clone(), t);
    }
    Ok((manifest, params))
}
