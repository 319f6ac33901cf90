//! Flat tensor archive: a JSON manifest listing every tensor's name, shape
//! and element offset, plus one binary blob of little-endian `f32` values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BackboneConfig, BackboneWeights};
use crate::error::{Error, Result};

pub const ARCHIVE_FORMAT: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in elements, not bytes.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightManifest {
    pub format: String,
    pub config: BackboneConfig,
    pub total: usize,
    pub tensors: Vec<TensorEntry>,
}

/// Serializes weights to `(manifest, blob)`.
pub fn export_weights(weights: &BackboneWeights, config: &BackboneConfig) -> (WeightManifest, Vec<u8>) {
    let mut copy = weights.clone();
    let mut tensors = Vec::new();
    let mut blob = Vec::new();
    let mut offset = 0;
    copy.visit_mut(&mut |name, shape, data| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset,
        });
        offset += data.len();
        for &v in data.iter() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    });
    let manifest = WeightManifest {
        format: ARCHIVE_FORMAT.to_string(),
        config: *config,
        total: offset,
        tensors,
    };
    (manifest, blob)
}

/// Rebuilds weights from a manifest and blob. Tensor names and shapes must
/// match the layout implied by the manifest's config.
pub fn import_weights(manifest: &WeightManifest, blob: &[u8]) -> Result<BackboneWeights> {
    if manifest.format != ARCHIVE_FORMAT {
        return Err(Error::Invalid(format!("unsupported archive format {:?}", manifest.format)));
    }
    if blob.len() != manifest.total * 4 {
        return Err(Error::Shape(format!(
            "archive blob has {} bytes, manifest declares {} values",
            blob.len(),
            manifest.total
        )));
    }
    let mut weights = BackboneWeights::init(&manifest.config)?;
    let mut entries = manifest.tensors.iter();
    let mut failure = None;
    weights.visit_mut(&mut |name, shape, data| {
        if failure.is_some() {
            return;
        }
        let Some(entry) = entries.next() else {
            failure = Some(format!("archive is missing tensor {name}"));
            return;
        };
        if entry.name != name || entry.shape != shape {
            failure = Some(format!(
                "expected {name} {shape:?}, archive has {} {:?}",
                entry.name, entry.shape
            ));
            return;
        }
        let end = entry.offset + data.len();
        if end > manifest.total {
            failure = Some(format!("tensor {name} runs past the end of the archive"));
            return;
        }
        for (dst, chunk) in data.iter_mut().zip(blob[entry.offset * 4..end * 4].chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")) as f64;
        }
    });
    if let Some(message) = failure {
        return Err(Error::Shape(message));
    }
    if let Some(extra) = entries.next() {
        return Err(Error::Shape(format!("unexpected tensor {} in archive", extra.name)));
    }
    Ok(weights)
}

/// Writes `<stem>.json` and `<stem>.bin`.
pub fn save_archive(weights: &BackboneWeights, config: &BackboneConfig, stem: &Path) -> Result<()> {
    let (manifest, blob) = export_weights(weights, config);
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Invalid(e.to_string()))?;
    crate::io::write_atomic(&stem.with_extension("json"), &json)?;
    crate::io::write_atomic(&stem.with_extension("bin"), &blob)
}

pub fn load_archive(stem: &Path) -> Result<BackboneWeights> {
    let json_path = stem.with_extension("json");
    let bin_path = stem.with_extension("bin");
    let text = fs::read(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let manifest: WeightManifest = serde_json::from_slice(&text).map_err(|e| Error::Parse {
        path: json_path.clone(),
        line: e.line(),
        field: "<manifest>".into(),
        message: e.to_string(),
    })?;
    let blob = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    import_weights(&manifest, &blob)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> BackboneConfig {
        BackboneConfig {
            input_dim: 4,
            model_dim: 8,
            qk_dim: 8,
            value_dim: 8,
            heads: 2,
            window: 3,
            levels: 1,
            mlp_ratio: 1.0,
            num_classes: 2,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let cfg = config();
        let w = BackboneWeights::init(&cfg).unwrap();
        let (manifest, blob) = export_weights(&w, &cfg);
        assert_eq!(blob.len(), manifest.total * 4);
        assert_eq!(import_weights(&manifest, &blob).unwrap(), w);
    }

    #[test]
    fn files_round_trip() {
        let cfg = config();
        let w = BackboneWeights::init(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("weights");
        save_archive(&w, &cfg, &stem).unwrap();
        assert_eq!(load_archive(&stem).unwrap(), w);
    }

    #[test]
    fn truncated_blob_rejected() {
        let cfg = config();
        let w = BackboneWeights::init(&cfg).unwrap();
        let (manifest, blob) = export_weights(&w, &cfg);
        assert!(import_weights(&manifest, &blob[..blob.len() - 4]).is_err());
        let mut renamed = manifest.clone();
        renamed.tensors[0].name = "other".into();
        assert!(import_weights(&renamed, &blob).is_err());
    }
}
