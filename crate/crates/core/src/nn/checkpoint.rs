//! Checkpoint files: a JSON manifest plus one little-endian `f64` blob.
//!
//! The blob holds every parameter's row-major values back to back, in
//! manifest order. The blob lives next to the manifest with extension `.bin`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{NnError, ParameterStore};
use crate::numcore::Matrix;

pub const FORMAT: &str = "hypermix-checkpoint";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub blob: String,
    pub params: Vec<ManifestEntry>,
}

pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn encode(store: &ParameterStore, blob_name: &str) -> (Manifest, Vec<u8>) {
    let mut bytes = Vec::with_capacity(store.numel() * 8);
    let mut params = Vec::with_capacity(store.len());
    for (name, p) in store.iter() {
        params.push(ManifestEntry {
            name: name.to_string(),
            rows: p.value.rows(),
            cols: p.value.cols(),
        });
        for v in p.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.to_string(),
        version: 1,
        blob: blob_name.to_string(),
        params,
    };
    (manifest, bytes)
}

pub fn decode(manifest: &Manifest, blob: &[u8]) -> Result<ParameterStore, NnError> {
    if manifest.format != FORMAT {
        return Err(NnError::Format(format!("unknown checkpoint format {:?}", manifest.format)));
    }
    let expected: usize = manifest.params.iter().map(|e| e.rows * e.cols * 8).sum();
    if blob.len() != expected {
        return Err(NnError::Format(format!(
            "blob holds {} bytes, manifest describes {expected}",
            blob.len()
        )));
    }
    let mut store = ParameterStore::new();
    let mut off = 0;
    for e in &manifest.params {
        let n = e.rows * e.cols;
        let data = blob[off..off + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect::<Vec<_>>();
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(NnError::Format(format!(
                "non-finite value at index {bad} of parameter {}",
                e.name
            )));
        }
        off += n * 8;
        store.insert(e.name.clone(), Matrix::from_vec(e.rows, e.cols, data)?)?;
    }
    Ok(store)
}

/// Writes `<manifest>` and its sibling `.bin` blob.
pub fn save(store: &ParameterStore, manifest_path: &Path) -> Result<(), NnError> {
    let blob = blob_path(manifest_path);
    let blob_name = blob
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| NnError::Format(format!("bad checkpoint path {}", manifest_path.display())))?
        .to_string();
    let (manifest, bytes) = encode(store, &blob_name);
    fs::write(&blob, bytes)?;
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| NnError::Format(e.to_string()))?;
    fs::write(manifest_path, json)?;
    Ok(())
}

pub fn load(manifest_path: &Path) -> Result<ParameterStore, NnError> {
    let text = fs::read_to_string(manifest_path)?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| NnError::Format(format!("manifest: {e}")))?;
    let blob_file = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.blob);
    let blob = fs::read(&blob_file)?;
    decode(&manifest, &blob)
}

/// Loads values into an existing store whose names and shapes must match.
pub fn load_into(store: &mut ParameterStore, manifest_path: &Path) -> Result<(), NnError> {
    let loaded = load(manifest_path)?;
    for (name, p) in loaded.iter() {
        if !store.contains(name) {
            return Err(NnError::Format(format!("unexpected parameter {name} in checkpoint")));
        }
        store.set_value(name, p.value.clone())?;
    }
    if let Some(missing) = store.names().find(|n| !loaded.contains(n)) {
        return Err(NnError::Missing(missing.to_string()));
    }
    Ok(())
}
