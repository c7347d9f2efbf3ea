//! Training runs: one directory per seed, built under a hidden partial
//! directory that is renamed into place once the run completes.

use std::fs;
use std::path::{Path, PathBuf};

use shedd::data::Dataset;
use shedd::eval::MetricsReport;
use shedd::trainer::{ExperimentConfig, Trainer};

use crate::error::{CliError, CliResult, Context};
use crate::setup::{read_json, Provenance};

pub const STATE_DIR: &str = "state";

/// Resume and interruption controls shared by `train` and `ablate`.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunControl {
    pub resume: bool,
    /// Stop every seed after this many epochs, leaving resumable state.
    pub stop_after_epochs: Option<usize>,
}

pub enum SeedOutcome {
    Finished(MetricsReport),
    Stopped { epoch: usize },
}

pub fn seed_dir(parent: &Path, seed: u64) -> PathBuf {
    parent.join(format!("seed-{seed}"))
}

fn partial_dir(run_dir: &Path) -> PathBuf {
    let name = run_dir.file_name().expect("run dirs have a name").to_string_lossy();
    run_dir.with_file_name(format!(".{name}.partial"))
}

pub fn read_report(run_dir: &Path) -> CliResult<MetricsReport> {
    let metrics: serde_json::Value = read_json(&run_dir.join("metrics.json"))?;
    serde_json::from_value(metrics["report"].clone())
        .map_err(|e| CliError::data(format!("{}/metrics.json: {e}", run_dir.display())))
}

/// Replaces `state` with a fresh snapshot without ever leaving it half-written.
fn save_state(trainer: &Trainer, partial: &Path) -> CliResult<()> {
    let fresh = partial.join("state.next");
    let state = partial.join(STATE_DIR);
    if fresh.exists() {
        fs::remove_dir_all(&fresh).map_err(|e| CliError::io(&fresh, e))?;
    }
    trainer.save_state(&fresh)?;
    if state.exists() {
        fs::remove_dir_all(&state).map_err(|e| CliError::io(&state, e))?;
    }
    fs::rename(&fresh, &state).map_err(|e| CliError::io(&state, e))
}

/// Trains one seed into `run_dir`. A completed `run_dir` is reused when
/// resuming; otherwise a partial run with saved state is continued.
pub fn run_seed(
    cfg: &ExperimentConfig,
    source: &Dataset,
    target: &Dataset,
    seed: u64,
    run_dir: &Path,
    provenance: &Provenance,
    control: RunControl,
) -> CliResult<SeedOutcome> {
    if control.resume && run_dir.join("metrics.json").exists() {
        eprintln!("{}: already complete", run_dir.display());
        return read_report(run_dir).map(SeedOutcome::Finished);
    }
    let partial = partial_dir(run_dir);
    let state = partial.join(STATE_DIR);
    let mut trainer = if control.resume && state.join("state.json").exists() {
        let t = Trainer::resume(cfg, source, target, seed, &state)
            .context(|| format!("resuming from {}", state.display()))?;
        eprintln!("{}: resuming after epoch {}", run_dir.display(), t.epoch());
        t
    } else {
        if partial.exists() {
            fs::remove_dir_all(&partial).map_err(|e| CliError::io(&partial, e))?;
        }
        fs::create_dir_all(&partial).map_err(|e| CliError::io(&partial, e))?;
        Trainer::new(cfg, source, target, seed)?
    };

    let epochs = cfg.train.epochs;
    while trainer.epoch() < epochs {
        if control.stop_after_epochs.is_some_and(|n| trainer.epoch() >= n) {
            return Ok(SeedOutcome::Stopped {
                epoch: trainer.epoch(),
            });
        }
        let row = trainer.run_epoch()?;
        let retained = row
            .retained_fraction
            .map(|f| format!(", retained {f:.3}"))
            .unwrap_or_default();
        eprintln!(
            "{} epoch {}/{epochs}: loss {:.4}{retained}, test F1 {:.4}",
            run_dir.display(),
            row.epoch,
            row.total,
            row.test_weighted_f1
        );
        save_state(&trainer, &partial)?;
    }

    let outputs = trainer.write_outputs(&partial)?;
    let mut record = provenance.clone();
    record.seed = Some(seed);
    record.write(&partial, cfg)?;
    if state.exists() {
        fs::remove_dir_all(&state).map_err(|e| CliError::io(&state, e))?;
    }
    if run_dir.exists() {
        fs::remove_dir_all(run_dir).map_err(|e| CliError::io(run_dir, e))?;
    }
    fs::rename(&partial, run_dir).map_err(|e| CliError::io(run_dir, e))?;
    Ok(SeedOutcome::Finished(outputs.report))
}

/// Runs every seed of `cfg` under `parent`. Returns `None` if any seed was
/// stopped early.
pub fn run_seeds(
    cfg: &ExperimentConfig,
    source: &Dataset,
    target: &Dataset,
    parent: &Path,
    provenance: &Provenance,
    control: RunControl,
) -> CliResult<Option<Vec<(u64, MetricsReport)>>> {
    fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    let mut reports = Vec::new();
    let mut stopped = false;
    for &seed in &cfg.seeds {
        let dir = seed_dir(parent, seed);
        match run_seed(cfg, source, target, seed, &dir, provenance, control)? {
            SeedOutcome::Finished(r) => reports.push((seed, r)),
            SeedOutcome::Stopped { epoch } => {
                eprintln!("{}: stopped after epoch {epoch}; rerun with --resume to continue", dir.display());
                stopped = true;
            }
        }
    }
    Ok((!stopped).then_some(reports))
}
