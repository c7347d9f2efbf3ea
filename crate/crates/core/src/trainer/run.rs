use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::step::{strong_views, train_step, StepBatch};
use super::ExperimentConfig;
use crate::data::{make_splits, Dataset, EpochPlan, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::losses::LossBundle;
use crate::model::{Architecture, InferenceModel, SheddModel};
use crate::nn::checkpoint::{
    load_checkpoint, read_f32_blob, read_json, save_checkpoint, write_f32_blob, write_json,
};
use crate::nn::{AdamWState, EmaState};
use crate::rng::{derive_seed, AUGMENT_STREAM, DATA_STREAM, INIT_STREAM};

pub const LOG_HEADER: &str =
    "epoch,l_cl_ST,l_dom_ST,l_dom_UÛ,l_orth_ST,l_orth_UÛ,l_pl_Û,total,retained_fraction,test_weighted_f1";

/// Epoch means of the loss terms and the EMA test score after the epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub cl_st: f64,
    pub dom_st: f64,
    pub dom_uu: f64,
    pub orth_st: f64,
    pub orth_uu: f64,
    pub pl_u: f64,
    pub total: f64,
    /// `None` when the pseudo-label term is disabled.
    pub retained_fraction: Option<f64>,
    pub test_weighted_f1: f64,
}

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let retained = self.retained_fraction.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.cl_st,
            self.dom_st,
            self.dom_uu,
            self.orth_st,
            self.orth_uu,
            self.pl_u,
            self.total,
            retained,
            self.test_weighted_f1
        )
    }
}

/// Counters and history needed to continue a run; parameters, EMA shadow and
/// optimiser moments are stored next to it as binary blobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainState {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub epoch: usize,
    pub optimizer_step: u64,
    pub log: Vec<EpochLog>,
}

/// Files written by [`Trainer::write_outputs`].
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub report: MetricsReport,
    pub log_csv: PathBuf,
    pub metrics_json: PathBuf,
    pub full_checkpoint: PathBuf,
    pub inference_checkpoint: PathBuf,
}

#[derive(Serialize)]
struct RunMetrics<'a> {
    seed: u64,
    labels_per_class: usize,
    epochs: usize,
    toggles: crate::losses::LossToggles,
    report: &'a MetricsReport,
}

/// The labelled/unlabelled split a run with `seed` trains on.
pub fn target_split(config: &ExperimentConfig, target: &Dataset, seed: u64) -> Result<Split> {
    make_splits(target, config.train.labels_per_class, derive_seed(seed, DATA_STREAM))
}

pub struct Trainer<'d> {
    config: ExperimentConfig,
    seed: u64,
    source: &'d Dataset,
    target: &'d Dataset,
    split: Split,
    plan: EpochPlan,
    pub model: SheddModel<f32>,
    optimizer: AdamWState<f32>,
    ema: EmaState<f32>,
    epoch: usize,
    log: Vec<EpochLog>,
}

impl<'d> Trainer<'d> {
    pub fn new(config: &ExperimentConfig, source: &'d Dataset, target: &'d Dataset, seed: u64) -> Result<Self> {
        config.validate()?;
        if source.num_classes != target.num_classes {
            return Err(Error::Config(format!(
                "source has {} classes, target {}",
                source.num_classes, target.num_classes
            )));
        }
        let train = &config.train;
        let data_seed = derive_seed(seed, DATA_STREAM);
        let split = target_split(config, target, seed)?;
        let plan = EpochPlan::new(
            source.len(),
            split.labelled.len(),
            split.unlabelled.len(),
            train.batch_size,
            derive_seed(data_seed, 1),
        )?;
        let arch = Architecture {
            model: config.model.clone(),
            num_classes: target.num_classes,
            source: source.geometry,
            target: target.geometry,
        };
        let model = SheddModel::new(arch, derive_seed(seed, INIT_STREAM))?;
        let optimizer = AdamWState::new(train.optimizer, &model.params);
        let ema = EmaState::new(&model.params, train.ema_momentum)?;
        Ok(Self {
            config: config.clone(),
            seed,
            source,
            target,
            split,
            plan,
            model,
            optimizer,
            ema,
            epoch: 0,
            log: Vec::new(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn log(&self) -> &[EpochLog] {
        &self.log
    }

    pub fn ema(&self) -> &EmaState<f32> {
        &self.ema
    }

    pub fn optimizer(&self) -> &AdamWState<f32> {
        &self.optimizer
    }

    pub fn iterations_per_epoch(&self) -> usize {
        self.plan.iterations()
    }

    fn gather(&self, dataset: &Dataset, pool: &[usize], positions: &[usize]) -> Result<(crate::tensor::Tensor<f32>, Vec<usize>)> {
        let indices: Vec<usize> = positions.iter().map(|&p| pool[p]).collect();
        dataset.batch(&indices)
    }

    /// Runs one epoch, evaluates under EMA weights and appends the log row.
    pub fn run_epoch(&mut self) -> Result<&EpochLog> {
        let toggles = self.config.train.toggles;
        let tau = self.config.train.tau;
        let augment_seed = derive_seed(self.seed, AUGMENT_STREAM);
        let batches = self.plan.epoch(self.epoch);
        let mut sums = [0.0f64; 7];
        let (mut retained, mut seen) = (0usize, 0usize);
        for (it, b) in batches.iter().enumerate() {
            let (x_s, y_s) = self.source.batch(&b.source)?;
            let (x_t, y_t) = self.gather(self.target, &self.split.labelled, &b.labelled)?;
            let unlabelled = if toggles.needs_unlabelled() {
                let (x_u, _) = self.gather(self.target, &self.split.unlabelled, &b.unlabelled)?;
                let x_uhat = strong_views(
                    &x_u,
                    &self.config.augment,
                    self.target.value_range,
                    augment_seed,
                    &[self.epoch as u64, it as u64],
                )?;
                Some((x_u, x_uhat))
            } else {
                None
            };
            let batch = StepBatch {
                x_s,
                y_s,
                x_t,
                y_t,
                unlabelled,
            };
            let bundle: LossBundle = train_step(
                &mut self.model,
                &mut self.optimizer,
                &mut self.ema,
                &batch,
                toggles,
                tau,
            )?;
            for (acc, v) in sums.iter_mut().zip(bundle.components().into_iter().chain([bundle.total])) {
                *acc += v;
            }
            retained += bundle.retained_count;
            seen += bundle.unlabelled_count;
        }
        self.epoch += 1;
        let report = self.evaluate()?;
        let n = batches.len().max(1) as f64;
        let [cl_st, dom_st, dom_uu, orth_st, orth_uu, pl_u, total] = sums.map(|s| s / n);
        self.log.push(EpochLog {
            epoch: self.epoch,
            cl_st,
            dom_st,
            dom_uu,
            orth_st,
            orth_uu,
            pl_u,
            total,
            retained_fraction: (toggles.pl_u && seen > 0).then(|| retained as f64 / seen as f64),
            test_weighted_f1: report.weighted_f1,
        });
        Ok(self.log.last().expect("row just pushed"))
    }

    /// Trains until `epochs` epochs have completed in total.
    pub fn run_until(&mut self, epochs: usize) -> Result<()> {
        while self.epoch < epochs {
            self.run_epoch()?;
        }
        Ok(())
    }

    /// Trains for the configured number of epochs and returns the final
    /// EMA-weighted report on the unlabelled/test set.
    pub fn train(&mut self) -> Result<MetricsReport> {
        self.run_until(self.config.train.epochs)?;
        self.evaluate()
    }

    /// Inference model over the EMA shadow of the target encoder and task head.
    pub fn ema_inference_model(&mut self) -> Result<InferenceModel<f32>> {
        let token = self.ema.swap_to_ema(&mut self.model.params)?;
        let model = self.model.inference_model();
        self.ema.restore(&mut self.model.params, token)?;
        model
    }

    /// Weighted F1 on the unlabelled/test set under EMA weights. The raw
    /// parameters are swapped out for the duration and restored afterwards.
    pub fn evaluate(&mut self) -> Result<MetricsReport> {
        let token = self.ema.swap_to_ema(&mut self.model.params)?;
        let report = self.model.inference_model().and_then(|m| {
            evaluate(&m, self.target, &self.split.unlabelled, self.config.train.eval_batch_size)
        });
        self.ema.restore(&mut self.model.params, token)?;
        report
    }

    pub fn log_csv(&self) -> String {
        let mut out = String::from(LOG_HEADER);
        out.push('\n');
        for row in &self.log {
            writeln!(out, "{}", row.csv_row()).unwrap();
        }
        out
    }

    fn arch_meta(&self) -> serde_json::Value {
        serde_json::to_value(&self.model.arch).expect("architecture serialises")
    }

    /// Writes `log.csv`, `metrics.json` and the `full` and `inference`
    /// checkpoints under `dir`.
    pub fn write_outputs(&mut self, dir: &Path) -> Result<RunOutputs> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let report = self.evaluate()?;
        let log_csv = dir.join("log.csv");
        fs::write(&log_csv, self.log_csv()).map_err(|e| Error::io(&log_csv, e))?;
        let metrics_json = dir.join("metrics.json");
        write_json(
            &metrics_json,
            &RunMetrics {
                seed: self.seed,
                labels_per_class: self.config.train.labels_per_class,
                epochs: self.epoch,
                toggles: self.config.train.toggles,
                report: &report,
            },
        )?;
        let full_checkpoint = dir.join("checkpoints").join("full");
        save_checkpoint(&full_checkpoint, "full", &self.model.params, Some(&self.ema), |_| true, self.arch_meta())?;
        let inference_checkpoint = dir.join("checkpoints").join("inference");
        save_checkpoint(
            &inference_checkpoint,
            "inference",
            &self.model.params,
            Some(&self.ema),
            SheddModel::<f32>::is_inference_param,
            self.arch_meta(),
        )?;
        Ok(RunOutputs {
            report,
            log_csv,
            metrics_json,
            full_checkpoint,
            inference_checkpoint,
        })
    }

    /// Saves everything needed by [`Trainer::resume`] into `dir`.
    pub fn save_state(&self, dir: &Path) -> Result<()> {
        save_checkpoint(&dir.join("model"), "full", &self.model.params, Some(&self.ema), |_| true, self.arch_meta())?;
        for id in self.model.params.ids() {
            let name = self.model.params.name(id);
            write_f32_blob(&dir.join("optimizer").join("m").join(format!("{name}.bin")), &self.optimizer.first_moment[id.0])?;
            write_f32_blob(&dir.join("optimizer").join("v").join(format!("{name}.bin")), &self.optimizer.second_moment[id.0])?;
        }
        write_json(
            &dir.join("state.json"),
            &TrainState {
                config: self.config.clone(),
                seed: self.seed,
                epoch: self.epoch,
                optimizer_step: self.optimizer.step,
                log: self.log.clone(),
            },
        )
    }

    /// Rebuilds a trainer from [`Trainer::save_state`] output. The config and
    /// seed must match the saved run.
    pub fn resume(
        config: &ExperimentConfig,
        source: &'d Dataset,
        target: &'d Dataset,
        seed: u64,
        dir: &Path,
    ) -> Result<Self> {
        let state: TrainState = read_json(&dir.join("state.json"))?;
        if state.seed != seed || state.config != *config {
            return Err(Error::Config(format!(
                "{} was saved with a different config or seed",
                dir.display()
            )));
        }
        let mut trainer = Self::new(config, source, target, seed)?;
        let ck = load_checkpoint(&dir.join("model"))?;
        let shadow = ck
            .ema
            .ok_or_else(|| Error::Manifest(format!("{}: state lacks the EMA shadow", dir.display())))?;
        if ck.params.len() != trainer.model.params.len() {
            return Err(Error::Manifest(format!(
                "{}: parameter count differs from the configured model",
                dir.display()
            )));
        }
        for id in trainer.model.params.ids() {
            let name = trainer.model.params.name(id).to_string();
            let saved = ck
                .params
                .find(&name)
                .ok_or_else(|| Error::Manifest(format!("state lacks parameter {name}")))?;
            trainer.model.params.set(id, ck.params.peek(saved).clone())?;
            let numel = trainer.model.params.peek(id).numel();
            trainer.optimizer.first_moment[id.0] =
                read_f32_blob(&dir.join("optimizer").join("m").join(format!("{name}.bin")), numel)?;
            trainer.optimizer.second_moment[id.0] =
                read_f32_blob(&dir.join("optimizer").join("v").join(format!("{name}.bin")), numel)?;
        }
        let ordered: Vec<_> = trainer
            .model
            .params
            .ids()
            .map(|id| {
                let saved = ck.params.find(trainer.model.params.name(id)).expect("checked above");
                shadow[saved.0].clone()
            })
            .collect();
        trainer.ema = EmaState::from_shadow(ordered, config.train.ema_momentum);
        trainer.optimizer.step = state.optimizer_step;
        trainer.epoch = state.epoch;
        trainer.log = state.log;
        Ok(trainer)
    }
}
