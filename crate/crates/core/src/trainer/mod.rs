//! Experiment configuration, ablation rows, the single training step and the
//! epoch loop with EMA evaluation, logging and resumable state.

mod run;
mod step;

pub use run::{target_split, EpochLog, RunOutputs, TrainState, Trainer, LOG_HEADER};
pub use step::{strong_views, train_step, forward_losses, StepBatch, StepForward};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::data::{Dataset, SyntheticBenchConfig};
use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use crate::losses::LossToggles;
use crate::model::ModelConfig;
use crate::nn::AdamWConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Chunk size for evaluation forward passes; does not affect results.
    pub eval_batch_size: usize,
    pub optimizer: AdamWConfig,
    /// Pseudo-label confidence threshold.
    pub tau: f64,
    pub ema_momentum: f64,
    pub toggles: LossToggles,
    /// Labelled target samples per class.
    pub labels_per_class: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            eval_batch_size: 256,
            optimizer: AdamWConfig::default(),
            tau: 0.95,
            ema_momentum: 0.95,
            toggles: LossToggles::ALL,
            labels_per_class: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("train.tau must lie in [0,1], got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.ema_momentum) {
            return Err(Error::Config(format!(
                "train.ema_momentum must lie in [0,1], got {}",
                self.ema_momentum
            )));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        if self.labels_per_class == 0 {
            return Err(Error::Config("train.labels_per_class must be at least 1".into()));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::Config(format!(
                "optimizer needs lr > 0 and betas in [0,1), got {o:?}"
            )));
        }
        if !(o.eps > 0.0) || !(o.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "optimizer needs eps > 0 and weight_decay >= 0, got {o:?}"
            )));
        }
        Ok(())
    }
}

/// The whole experiment surface: benchmark, network, optimisation,
/// augmentation, the label budgets of a report and the seeds to repeat over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: SyntheticBenchConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub budgets: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            benchmark: SyntheticBenchConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
            budgets: vec![5, 10, 20, 40],
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.benchmark.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.augment.validate()?;
        if self.budgets.contains(&0) {
            return Err(Error::Config("budgets must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

/// Rows of the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AblationRow {
    Abla1,
    Abla2,
    Abla3,
    Abla4,
    Abla5,
    Abla6,
    Full,
}

impl AblationRow {
    pub const ALL: [AblationRow; 7] = [
        AblationRow::Abla1,
        AblationRow::Abla2,
        AblationRow::Abla3,
        AblationRow::Abla4,
        AblationRow::Abla5,
        AblationRow::Abla6,
        AblationRow::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationRow::Abla1 => "abla1",
            AblationRow::Abla2 => "abla2",
            AblationRow::Abla3 => "abla3",
            AblationRow::Abla4 => "abla4",
            AblationRow::Abla5 => "abla5",
            AblationRow::Abla6 => "abla6",
            AblationRow::Full => "full",
        }
    }

    pub fn toggles(self) -> LossToggles {
        let t = |cl_st, orth_st, dom_st, orth_uu, dom_uu, pl_u| LossToggles {
            cl_st,
            orth_st,
            dom_st,
            orth_uu,
            dom_uu,
            pl_u,
        };
        match self {
            AblationRow::Abla1 => t(true, false, false, false, false, false),
            AblationRow::Abla2 => t(true, true, true, false, false, false),
            AblationRow::Abla3 => t(true, true, true, true, true, false),
            AblationRow::Abla4 => t(true, true, true, false, false, true),
            AblationRow::Abla5 => t(true, false, true, false, true, true),
            AblationRow::Abla6 => t(true, true, false, true, false, true),
            AblationRow::Full => LossToggles::ALL,
        }
    }
}

impl fmt::Display for AblationRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationRow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|r| r.name() == lower)
            .ok_or_else(|| Error::Config(format!("unknown ablation row {s:?}")))
    }
}

/// `config` with its loss toggles replaced by the row's pattern.
pub fn apply_ablation(config: &ExperimentConfig, row: AblationRow) -> ExperimentConfig {
    let mut out = config.clone();
    out.train.toggles = row.toggles();
    out
}

/// Trains every ablation row with `seed` and returns the final reports in
/// [`AblationRow::ALL`] order. With `out`, each run's outputs go to
/// `out/<row>/`.
pub fn run_ablation_suite(
    config: &ExperimentConfig,
    source: &Dataset,
    target: &Dataset,
    seed: u64,
    out: Option<&Path>,
) -> Result<Vec<(AblationRow, MetricsReport)>> {
    AblationRow::ALL
        .into_iter()
        .map(|row| {
            let cfg = apply_ablation(config, row);
            let mut trainer = Trainer::new(&cfg, source, target, seed)?;
            trainer.run_until(cfg.train.epochs)?;
            let report = match out {
                Some(dir) => trainer.write_outputs(&dir.join(row.name()))?.report,
                None => trainer.evaluate()?,
            };
            Ok((row, report))
        })
        .collect()
}
