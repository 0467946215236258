//! Tensor archives: a JSON manifest plus a little-endian `f64` blob.
//!
//! `<stem>.json` lists every tensor with its shape and byte offset into
//! `<stem>.bin`. Parameter checkpoints and precomputed CoVe streams share
//! the format.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DTYPE: &str = "float64";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frozen_rows: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tensors: Vec<ManifestEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

/// Paths of the manifest and blob for an archive stem (`dir/model` gives
/// `dir/model.json` and `dir/model.bin`).
pub fn archive_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

/// Named tensors in insertion order, serialized bit-exactly.
pub fn save_tensors<'a>(
    stem: &Path,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor, Vec<usize>)>,
    metadata: serde_json::Value,
) -> Result<()> {
    let (json_path, bin_path) = archive_paths(stem);
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for (name, t, frozen_rows) in tensors {
        entries.push(ManifestEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: DTYPE.to_string(),
            offset: blob.len() as u64,
            frozen_rows,
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        tensors: entries,
        metadata,
    };
    if let Some(dir) = json_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&json_path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&json_path, e))?;
    fs::write(&bin_path, blob).map_err(|e| Error::io(&bin_path, e))?;
    Ok(())
}

pub fn load_tensors(stem: &Path) -> Result<(Manifest, Vec<Tensor>)> {
    let (json_path, bin_path) = archive_paths(stem);
    let text = fs::read(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let manifest: Manifest = serde_json::from_slice(&text)?;
    let blob = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let mut out = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        if e.dtype != DTYPE {
            return Err(Error::Data(format!("tensor {} has dtype {}, expected {DTYPE}", e.name, e.dtype)));
        }
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + n * 8;
        let bytes = blob.get(start..end).ok_or_else(|| {
            Error::Data(format!("tensor {} runs past the end of {}", e.name, bin_path.display()))
        })?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        out.push(Tensor::new(e.shape.clone(), data)?);
    }
    Ok((manifest, out))
}

pub fn save_params(stem: &Path, params: &ParamSet, metadata: serde_json::Value) -> Result<()> {
    save_tensors(
        stem,
        params.ids().map(|id| {
            let frozen = params
                .frozen_rows(id)
                .iter()
                .enumerate()
                .filter_map(|(i, &f)| f.then_some(i))
                .collect();
            (params.name(id), params.get(id), frozen)
        }),
        metadata,
    )
}

pub fn load_params(stem: &Path) -> Result<(ParamSet, serde_json::Value)> {
    let (manifest, tensors) = load_tensors(stem)?;
    let mut params = ParamSet::new();
    for (entry, t) in manifest.tensors.iter().zip(tensors) {
        let id = params.insert(entry.name.clone(), t)?;
        for &r in &entry.frozen_rows {
            params.freeze_row(id, r);
        }
    }
    Ok((params, manifest.metadata))
}
