//! On-disk parameter sets: a JSON index plus one little-endian `f32` blob per
//! named tensor, optionally mirrored by EMA shadow blobs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ema::EmaState;
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "shedd-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointIndex {
    pub format: String,
    pub version: u32,
    pub variant: String,
    pub ema_included: bool,
    pub params: Vec<ParamEntry>,
    /// Free-form description of what the parameters belong to.
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub index: CheckpointIndex,
    pub params: ParamStore<f32>,
    /// EMA shadows aligned with `params`, when the checkpoint carries them.
    pub ema: Option<Vec<Tensor<f32>>>,
}

fn blob_path(dir: &Path, kind: &str, name: &str) -> PathBuf {
    dir.join(kind).join(format!("{name}.bin"))
}

pub fn write_f32_blob(path: &Path, data: &[f32]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_f32_blob(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::CorruptDataset(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            expected * 4,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<V: for<'de> Deserialize<'de>>(path: &Path) -> Result<V> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

/// Writes the parameters whose names pass `include`.
pub fn save_checkpoint(
    dir: &Path,
    variant: &str,
    params: &ParamStore<f32>,
    ema: Option<&EmaState<f32>>,
    include: impl Fn(&str) -> bool,
    meta: serde_json::Value,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for id in params.ids() {
        let name = params.name(id);
        if !include(name) {
            continue;
        }
        let value = params.peek(id);
        write_f32_blob(&blob_path(dir, "params", name), value.data())?;
        if let Some(ema) = ema {
            write_f32_blob(&blob_path(dir, "ema", name), ema.shadow()[id.0].data())?;
        }
        entries.push(ParamEntry {
            name: name.to_string(),
            shape: value.shape().to_vec(),
        });
    }
    let index = CheckpointIndex {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        variant: variant.into(),
        ema_included: ema.is_some(),
        params: entries,
        meta,
    };
    write_json(&dir.join(INDEX_FILE), &index)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let index: CheckpointIndex = read_json(&dir.join(INDEX_FILE))?;
    if index.format != CHECKPOINT_FORMAT || index.version != CHECKPOINT_VERSION {
        return Err(Error::Manifest(format!(
            "{}: unsupported checkpoint format {} v{}",
            dir.display(),
            index.format,
            index.version
        )));
    }
    let mut params = ParamStore::new();
    let mut shadows = Vec::new();
    for entry in &index.params {
        let numel = entry.shape.iter().product();
        let data = read_f32_blob(&blob_path(dir, "params", &entry.name), numel)?;
        params.insert(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?)?;
        if index.ema_included {
            let data = read_f32_blob(&blob_path(dir, "ema", &entry.name), numel)?;
            shadows.push(Tensor::new(entry.shape.clone(), data)?);
        }
    }
    Ok(Checkpoint {
        ema: index.ema_included.then_some(shadows),
        index,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_with_filter_and_ema() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::<f32>::new();
        store
            .insert("keep.w", Tensor::from_slice(&[2, 2], &[1.0, -2.5, 3.0, 1e-7]).unwrap())
            .unwrap();
        store.insert("drop.w", Tensor::full(&[3], 9.0)).unwrap();
        let ema = EmaState::new(&store, 0.5).unwrap();
        save_checkpoint(
            dir.path(),
            "inference",
            &store,
            Some(&ema),
            |n| n.starts_with("keep"),
            serde_json::json!({"note": "test"}),
        )
        .unwrap();
        let ck = load_checkpoint(dir.path()).unwrap();
        assert_eq!(ck.params.len(), 1);
        assert_eq!(ck.params.name(crate::nn::ParamId(0)), "keep.w");
        assert_eq!(ck.params.fingerprint(), {
            let mut only = ParamStore::<f32>::new();
            only.insert("keep.w", store.peek(crate::nn::ParamId(0)).clone()).unwrap();
            only.fingerprint()
        });
        assert!(ck.index.ema_included);
        assert_eq!(ck.ema.unwrap().len(), 1);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::<f32>::new();
        store.insert("w", Tensor::full(&[4], 1.0)).unwrap();
        save_checkpoint(dir.path(), "full", &store, None, |_| true, serde_json::Value::Null)
            .unwrap();
        fs::write(dir.path().join("params/w.bin"), [0u8; 6]).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }
}
