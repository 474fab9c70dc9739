//! Weight manifest: `<stem>.json` lists `{name, shape}` entries (plus an
//! optional free-form `config` block) and `<stem>.bin` holds the values as
//! little-endian `f32`, concatenated in entry order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ManifestEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightManifest {
    pub entries: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

fn paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("bin") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    };
    (with("json"), with("bin"))
}

pub fn save_manifest(path: impl AsRef<Path>, manifest: &WeightManifest, tensors: &[Vec<f32>]) -> Result<()> {
    if manifest.entries.len() != tensors.len() {
        return Err(Error::Manifest(format!(
            "{} entries but {} tensors",
            manifest.entries.len(),
            tensors.len()
        )));
    }
    let mut blob = Vec::new();
    for (e, t) in manifest.entries.iter().zip(tensors) {
        if e.len() != t.len() {
            return Err(Error::Manifest(format!("tensor {} has {} values, shape {:?}", e.name, t.len(), e.shape)));
        }
        blob.extend(t.iter().flat_map(|v| v.to_le_bytes()));
    }
    let (json, bin) = paths(path.as_ref());
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    fs::write(&bin, blob).map_err(|e| Error::io(&bin, e))?;
    Ok(())
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<(WeightManifest, Vec<Vec<f32>>)> {
    let (json, bin) = paths(path.as_ref());
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let manifest: WeightManifest =
        serde_json::from_str(&text).map_err(|e| Error::Header { path: json.clone(), source: e })?;
    let blob = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let expected: usize = manifest.entries.iter().map(|e| e.len() * 4).sum();
    if blob.len() != expected {
        return Err(Error::DataSizeMismatch { expected, found: blob.len() });
    }
    let mut offset = 0;
    let tensors = manifest
        .entries
        .iter()
        .map(|e| {
            let bytes = &blob[offset..offset + e.len() * 4];
            offset += e.len() * 4;
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
        })
        .collect();
    Ok((manifest, tensors))
}
