use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_SUFFIX: &str = ".manifest.json";

/// On-disk description of a dataset. Payload paths are relative to the
/// manifest's directory. The images are little-endian `f32`, samples-major and
/// row-major; labels are little-endian `i32`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub modality: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub num_samples: usize,
    pub value_range: [f32; 2],
    pub data_file: String,
    pub labels_file: String,
    /// Hex SHA-256 of the image payload followed by the label payload.
    pub checksum: String,
}

fn payload_checksum(data: &[u8], labels: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(data);
    h.update(labels);
    hex::encode(h.finalize())
}

/// Writes `<stem>.manifest.json`, `<stem>.data.bin` and `<stem>.labels.bin`
/// into `dir` and returns the manifest path.
pub fn write_dataset(dir: &Path, stem: &str, ds: &Dataset) -> Result<(PathBuf, DatasetManifest)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let data: Vec<u8> = ds.images.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    let labels: Vec<u8> = ds
        .labels
        .iter()
        .flat_map(|&l| (l as i32).to_le_bytes())
        .collect();
    let manifest = DatasetManifest {
        modality: ds.modality.clone(),
        channels: ds.geometry.channels,
        height: ds.geometry.height,
        width: ds.geometry.width,
        num_classes: ds.num_classes,
        num_samples: ds.len(),
        value_range: [ds.value_range.0, ds.value_range.1],
        data_file: format!("{stem}.data.bin"),
        labels_file: format!("{stem}.labels.bin"),
        checksum: payload_checksum(&data, &labels),
    };
    let data_path = dir.join(&manifest.data_file);
    fs::write(&data_path, &data).map_err(|e| Error::io(&data_path, e))?;
    let labels_path = dir.join(&manifest.labels_file);
    fs::write(&labels_path, &labels).map_err(|e| Error::io(&labels_path, e))?;
    let path = dir.join(format!("{stem}{MANIFEST_SUFFIX}"));
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok((path, manifest))
}

/// Reads and validates a dataset. Values are clamped to the declared range.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let m: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Manifest(format!("{}: {e}", manifest_path.display())))?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));

    let per_sample = m.channels * m.height * m.width;
    if per_sample == 0 || m.num_samples == 0 {
        return Err(Error::Manifest(format!(
            "{}: empty geometry or sample count",
            manifest_path.display()
        )));
    }
    let data_path = dir.join(&m.data_file);
    let data = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let want = m.num_samples * per_sample * 4;
    if data.len() != want {
        return Err(Error::CorruptDataset(format!(
            "{}: expected {want} bytes, found {}",
            data_path.display(),
            data.len()
        )));
    }
    let labels_path = dir.join(&m.labels_file);
    let labels = fs::read(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
    if labels.len() != m.num_samples * 4 {
        return Err(Error::CorruptDataset(format!(
            "{}: expected {} bytes, found {}",
            labels_path.display(),
            m.num_samples * 4,
            labels.len()
        )));
    }
    if payload_checksum(&data, &labels) != m.checksum {
        return Err(Error::CorruptDataset(format!(
            "{}: checksum mismatch",
            manifest_path.display()
        )));
    }

    let [lo, hi] = m.value_range;
    let mut values = Vec::with_capacity(data.len() / 4);
    for c in data.chunks_exact(4) {
        let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        if !v.is_finite() {
            return Err(Error::CorruptDataset(format!(
                "{}: non-finite value",
                data_path.display()
            )));
        }
        values.push(v.clamp(lo, hi));
    }
    let mut parsed = Vec::with_capacity(m.num_samples);
    for c in labels.chunks_exact(4) {
        let l = i32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        if l < 0 || l as usize >= m.num_classes {
            return Err(Error::Manifest(format!(
                "{}: label {l} outside [0, {})",
                labels_path.display(),
                m.num_classes
            )));
        }
        parsed.push(l as usize);
    }
    let images = Tensor::new(vec![m.num_samples, m.channels, m.height, m.width], values)?;
    Dataset::new(m.modality, m.num_classes, (lo, hi), images, parsed)
}
