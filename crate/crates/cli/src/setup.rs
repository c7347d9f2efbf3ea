//! Config and data loading, output directories and provenance records.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use shedd::data::{generate_synthetic_benchmark, load_dataset, Dataset, DatasetManifest, MANIFEST_SUFFIX};
use shedd::losses::LossToggles;
use shedd::trainer::ExperimentConfig;

use crate::error::{CliError, CliResult, Context, CONFIG};

pub const SOURCE_STEM: &str = "source";
pub const TARGET_STEM: &str = "target";
pub const PROVENANCE_FILE: &str = "provenance.json";
pub const CONFIG_FILE: &str = "config.json";

pub fn load_config(path: Option<&Path>) -> CliResult<ExperimentConfig> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::new(CONFIG, format!("{}: {e}", p.display())))?;
            ExperimentConfig::from_json(&text).context(|| p.display().to_string())
        }
    }
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(cfg.to_json().as_bytes()))
}

/// Value of `SHEDD_THREADS`, default 1. Training runs one stream per
/// process, so values above 1 are accepted but change nothing.
pub fn threads() -> CliResult<usize> {
    match std::env::var("SHEDD_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::new(CONFIG, format!("SHEDD_THREADS must be a positive integer, got {v:?}"))),
        },
    }
}

/// Where the datasets of a run came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataOrigin {
    /// Rendered in memory from the config's benchmark section.
    Generated { benchmark_seed: u64 },
    Loaded {
        dir: PathBuf,
        source_checksum: String,
        target_checksum: String,
    },
}

fn manifest_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}{MANIFEST_SUFFIX}"))
}

fn read_manifest(path: &Path) -> CliResult<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn load_data(cfg: &ExperimentConfig, dir: Option<&Path>) -> CliResult<(Dataset, Dataset, DataOrigin)> {
    match dir {
        None => {
            let (s, t) = generate_synthetic_benchmark(&cfg.benchmark)?;
            Ok((s, t, DataOrigin::Generated {
                benchmark_seed: cfg.benchmark.seed,
            }))
        }
        Some(dir) => {
            let mut out = Vec::new();
            let mut checksums = Vec::new();
            for stem in [SOURCE_STEM, TARGET_STEM] {
                let path = manifest_path(dir, stem);
                let ds = load_dataset(&path).data_context(|| format!("loading {}", path.display()))?;
                checksums.push(read_manifest(&path)?.checksum);
                out.push(ds);
            }
            let target = out.pop().expect("two datasets");
            let source = out.pop().expect("two datasets");
            if source.num_classes != target.num_classes {
                return Err(CliError::data(format!(
                    "{}: source has {} classes, target {}",
                    dir.display(),
                    source.num_classes,
                    target.num_classes
                )));
            }
            Ok((source, target, DataOrigin::Loaded {
                dir: dir.to_path_buf(),
                target_checksum: checksums.pop().expect("two checksums"),
                source_checksum: checksums.pop().expect("two checksums"),
            }))
        }
    }
}

/// Makes `out` available for writing. An existing non-empty directory is an
/// error unless `force` (wipe it) or `reuse` (keep it) is set.
pub fn prepare_out(out: &Path, force: bool, reuse: bool) -> CliResult<()> {
    if out.exists() {
        let non_empty = fs::read_dir(out).map_err(|e| CliError::io(out, e))?.next().is_some();
        if force {
            fs::remove_dir_all(out).map_err(|e| CliError::io(out, e))?;
        } else if non_empty && !reuse {
            return Err(CliError::usage(format!(
                "{} already exists and is not empty; pass --force to replace it",
                out.display()
            )));
        }
    }
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

/// Writes `bytes` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn write_json<V: Serialize>(path: &Path, value: &V) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("value serialises") + "\n";
    write_atomic(path, text.as_bytes())
}

pub fn read_json<V: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<V> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Enough to rerun a result exactly: together with `config.json` in the same
/// directory it pins the code version, the configuration, the seed and data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub labels_per_class: usize,
    pub ablation: Option<String>,
    pub toggles: LossToggles,
    pub data: Option<DataOrigin>,
    pub threads: usize,
}

impl Provenance {
    pub fn new(command: &str, cfg: &ExperimentConfig, data: Option<DataOrigin>) -> CliResult<Self> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_sha256: config_hash(cfg),
            seed: None,
            labels_per_class: cfg.train.labels_per_class,
            ablation: None,
            toggles: cfg.train.toggles,
            data,
            threads: threads()?,
        })
    }

    /// Writes this record and the config it refers to into `dir`.
    pub fn write(&self, dir: &Path, cfg: &ExperimentConfig) -> CliResult<()> {
        write_atomic(&dir.join(CONFIG_FILE), (cfg.to_json() + "\n").as_bytes())?;
        write_json(&dir.join(PROVENANCE_FILE), self)
    }
}
