//! Weighted F1, evaluation of target-domain predictions, embedding export and
//! aggregation over seeds.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::InferenceModel;
use crate::rng::stream_rng;

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(truth: &[usize], predicted: &[usize], num_classes: usize) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::InsufficientData("cannot score an empty prediction set".into()));
        }
        if truth.len() != predicted.len() {
            return Err(Error::Shape(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut counts = vec![0u64; num_classes * num_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= num_classes || p >= num_classes {
                return Err(Error::Contract(format!(
                    "label pair ({t}, {p}) outside [0, {num_classes})"
                )));
            }
            counts[t * num_classes + p] += 1;
        }
        Ok(Self {
            num_classes,
            counts,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.num_classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        (0..self.num_classes).map(|p| self.get(class, p)).sum()
    }

    pub fn predicted_count(&self, class: usize) -> u64 {
        (0..self.num_classes).map(|t| self.get(t, class)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub weighted_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub per_class_support: Vec<u64>,
    pub accuracy: f64,
    pub num_samples: u64,
}

impl MetricsReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        let c = cm.num_classes();
        let mut per_class_f1 = Vec::with_capacity(c);
        let mut per_class_support = Vec::with_capacity(c);
        let mut weighted = 0.0;
        let mut correct = 0;
        for k in 0..c {
            let tp = cm.get(k, k);
            let support = cm.support(k);
            let predicted = cm.predicted_count(k);
            // 2PR/(P+R) simplifies to 2tp/(support+predicted); 0/0 counts as 0.
            let f1 = if support + predicted == 0 {
                0.0
            } else {
                2.0 * tp as f64 / (support + predicted) as f64
            };
            weighted += support as f64 * f1;
            correct += tp;
            per_class_f1.push(f1);
            per_class_support.push(support);
        }
        let n = cm.total();
        Self {
            weighted_f1: weighted / n as f64,
            per_class_f1,
            per_class_support,
            accuracy: correct as f64 / n as f64,
            num_samples: n,
        }
    }
}

/// Support-weighted mean of per-class F1.
pub fn weighted_f1(truth: &[usize], predicted: &[usize], num_classes: usize) -> Result<MetricsReport> {
    Ok(MetricsReport::from_confusion(&ConfusionMatrix::new(
        truth,
        predicted,
        num_classes,
    )?))
}

fn check_compatible(model: &InferenceModel<f32>, data: &Dataset) -> Result<()> {
    if data.geometry != model.arch.target {
        return Err(Error::Geometry(format!(
            "model expects target geometry {:?}, dataset {} has {:?}",
            model.arch.target, data.modality, data.geometry
        )));
    }
    if data.num_classes != model.arch.num_classes {
        return Err(Error::Geometry(format!(
            "model predicts {} classes, dataset has {}",
            model.arch.num_classes, data.num_classes
        )));
    }
    Ok(())
}

/// Predicted classes for `indices`, in order, computed in chunks.
pub fn predict(
    model: &InferenceModel<f32>,
    data: &Dataset,
    indices: &[usize],
    batch_size: usize,
) -> Result<Vec<usize>> {
    check_compatible(model, data)?;
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, _) = data.batch(chunk)?;
        out.extend(model.infer(&x)?);
    }
    Ok(out)
}

/// Scores `model` on the samples `indices` of `data`.
pub fn evaluate(
    model: &InferenceModel<f32>,
    data: &Dataset,
    indices: &[usize],
    batch_size: usize,
) -> Result<MetricsReport> {
    let predicted = predict(model, data, indices, batch_size)?;
    let truth: Vec<usize> = indices.iter().map(|&i| data.labels[i]).collect();
    weighted_f1(&truth, &predicted, data.num_classes)
}

/// Picks `per_class` samples of every class from `pool` and writes their
/// invariant embeddings as CSV (`sample_id,true_class,z_inv_0,...`). Returns
/// the selected dataset indices in row order.
pub fn export_embeddings(
    model: &InferenceModel<f32>,
    data: &Dataset,
    pool: &[usize],
    per_class: usize,
    seed: u64,
    path: &Path,
) -> Result<Vec<usize>> {
    check_compatible(model, data)?;
    let mut by_class = vec![Vec::new(); data.num_classes];
    for &i in pool {
        by_class[data.labels[i]].push(i);
    }
    let mut rng = stream_rng(seed, &[0x454d_4244]);
    let mut selected = Vec::with_capacity(per_class * data.num_classes);
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.len() < per_class {
            return Err(Error::InsufficientData(format!(
                "class {class} has {} samples, export needs {per_class}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        selected.extend_from_slice(&members[..per_class]);
    }
    if selected.is_empty() {
        return Err(Error::InsufficientData("nothing to export".into()));
    }

    let d = model.arch.model.half_dim();
    let mut text = String::from("sample_id,true_class");
    for j in 0..d {
        write!(text, ",z_inv_{j}").unwrap();
    }
    text.push('\n');
    for chunk in selected.chunks(256) {
        let (x, labels) = data.batch(chunk)?;
        let (z_inv, _) = model.embed(&x)?;
        for (row, (&id, &label)) in chunk.iter().zip(&labels).enumerate() {
            write!(text, "{id},{label}").unwrap();
            for v in z_inv.row(row) {
                write!(text, ",{v}").unwrap();
            }
            text.push('\n');
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(selected)
}

/// Mean and sample standard deviation of one metric over runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

pub fn aggregate_runs(values: &[f64]) -> Result<Aggregate> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "standard deviation needs at least 2 runs, got {n}"
        )));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(Aggregate {
        mean,
        std: var.sqrt(),
        runs: n,
    })
}

/// Weighted F1 and accuracy aggregated over reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportAggregate {
    pub weighted_f1: Aggregate,
    pub accuracy: Aggregate,
}

pub fn aggregate_reports(reports: &[MetricsReport]) -> Result<ReportAggregate> {
    let f1: Vec<f64> = reports.iter().map(|r| r.weighted_f1).collect();
    let acc: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
    Ok(ReportAggregate {
        weighted_f1: aggregate_runs(&f1)?,
        accuracy: aggregate_runs(&acc)?,
    })
}
