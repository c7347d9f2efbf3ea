//! Finite-difference oracles for every graph operation, every loss and a
//! whole forward pass of a tiny model.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use shedd::losses::{
    classification_loss, cross_entropy, domain_loss_labelled, domain_loss_unlabelled,
    orthogonality_loss, paired_orthogonality_loss, pseudo_label_loss, total_loss, LossTerms,
    LossToggles, ORTHOGONALITY_EPS,
};
use shedd::model::{Architecture, Domain, Geometry, ModelConfig, SheddModel};
use shedd::nn::Session;
use shedd::rng::stream_rng;
use shedd::tensor::{finite_diff_grad, relative_error, Graph, Tensor, Var};
use shedd::trainer::{forward_losses, StepBatch};
use shedd::Result;

use super::{distinct, signed_away_from_zero, simplex_rows, uniform};

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-3;
/// Denominator floor of the relative error.
pub const FLOOR: f64 = 1e-3;

type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

/// A function of one or more tensors, checked against central differences
/// of `sum(out * R)` for a fixed random `R`.
pub struct Case {
    pub name: String,
    pub inputs: Vec<Tensor<f64>>,
    build: Build,
}

impl Case {
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<Tensor<f64>>,
        build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            inputs,
            build: Box::new(build),
        }
    }

    fn objective(&self, g: &mut Graph<f64>, leaves: &[Var], weights: Option<&Tensor<f64>>) -> Result<(Var, Tensor<f64>)> {
        let out = (self.build)(g, leaves)?;
        let shape = g.value(out).shape().to_vec();
        let weights = match weights {
            Some(w) => w.clone(),
            None => {
                let mut rng = stream_rng(0x5747, &[self.inputs.len() as u64, shape.len() as u64]);
                let n: usize = shape.iter().product();
                Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?
            }
        };
        let w = g.constant(weights.clone());
        let weighted = g.mul(out, w)?;
        Ok((g.sum(weighted, None)?, weights))
    }

    /// Largest relative error between the analytic and numeric gradients
    /// over all inputs.
    pub fn max_error(&self) -> Result<f64> {
        let mut g = Graph::new();
        let leaves: Vec<Var> = self.inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let (loss, weights) = self.objective(&mut g, &leaves, None)?;
        g.backward(loss)?;
        let mut worst: f64 = 0.0;
        for (i, input) in self.inputs.iter().enumerate() {
            let analytic = g
                .grad(leaves[i])
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; input.numel()]);
            let numeric = finite_diff_grad(
                |x| {
                    let mut h = Graph::no_grad();
                    let vars: Vec<Var> = self
                        .inputs
                        .iter()
                        .enumerate()
                        .map(|(j, t)| h.leaf(if j == i { x.clone() } else { t.clone() }))
                        .collect();
                    let (l, _) = self.objective(&mut h, &vars, Some(&weights))?;
                    Ok(h.value(l).data()[0])
                },
                input,
                STEP,
            )?;
            worst = worst.max(relative_error(&analytic, numeric.data(), FLOOR));
        }
        Ok(worst)
    }
}

fn labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

/// One case per graph operation (several for ops with modes).
pub fn op_cases(seed: u64) -> Vec<Case> {
    let mut r = stream_rng(seed, &[0x4f50]);
    let r = &mut r;
    let mut cases = vec![
        Case::new("matmul", vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4, 2], -1.0, 1.0)], |g, v| {
            g.matmul(v[0], v[1])
        }),
        Case::new("transpose", vec![uniform(r, &[3, 4], -1.0, 1.0)], |g, v| g.transpose(v[0])),
    ];
    for (stride, padding) in [(1, 0), (1, 1), (2, 0), (2, 1)] {
        cases.push(Case::new(
            format!("conv2d(stride={stride},padding={padding})"),
            vec![uniform(r, &[2, 2, 5, 5], -1.0, 1.0), uniform(r, &[3, 2, 3, 3], -1.0, 1.0)],
            move |g, v| g.conv2d(v[0], v[1], stride, padding),
        ));
    }
    cases.extend([
        Case::new(
            "add_channel_bias",
            vec![uniform(r, &[2, 3, 2, 2], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0)],
            |g, v| g.add_channel_bias(v[0], v[1]),
        ),
        Case::new("add_row_bias", vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4], -1.0, 1.0)], |g, v| {
            g.add_row_bias(v[0], v[1])
        }),
        Case::new("add", vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[3, 4], -1.0, 1.0)], |g, v| {
            g.add(v[0], v[1])
        }),
        Case::new("sub", vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[3, 4], -1.0, 1.0)], |g, v| {
            g.sub(v[0], v[1])
        }),
        Case::new("mul", vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[3, 4], -1.0, 1.0)], |g, v| {
            g.mul(v[0], v[1])
        }),
        Case::new("scale", vec![uniform(r, &[3, 4], -1.0, 1.0)], |g, v| Ok(g.scale(v[0], -1.7))),
        Case::new("relu", vec![signed_away_from_zero(r, &[4, 5], 0.1, 1.0)], |g, v| Ok(g.relu(v[0]))),
        Case::new("log", vec![uniform(r, &[3, 4], 0.5, 2.0)], |g, v| Ok(g.log(v[0]))),
        Case::new("exp", vec![uniform(r, &[3, 4], -1.0, 1.0)], |g, v| Ok(g.exp(v[0]))),
    ]);
    for axis in [None, Some(0), Some(1), Some(2)] {
        let shape = [2, 3, 4];
        cases.push(Case::new(format!("sum(axis={axis:?})"), vec![uniform(r, &shape, -1.0, 1.0)], move |g, v| {
            g.sum(v[0], axis)
        }));
        cases.push(Case::new(format!("mean(axis={axis:?})"), vec![uniform(r, &shape, -1.0, 1.0)], move |g, v| {
            g.mean(v[0], axis)
        }));
        cases.push(Case::new(format!("max(axis={axis:?})"), vec![distinct(r, &shape)], move |g, v| {
            Ok(g.max(v[0], axis)?.0)
        }));
    }
    let gather_idx = labels(r, 4, 5);
    cases.extend([
        Case::new("softmax", vec![uniform(r, &[3, 5], -2.0, 2.0)], |g, v| g.softmax(v[0])),
        Case::new("avg_pool2d(2)", vec![uniform(r, &[2, 2, 4, 4], -1.0, 1.0)], |g, v| g.avg_pool2d(v[0], 2)),
        Case::new("avg_pool2d(2, ragged)", vec![uniform(r, &[1, 2, 5, 5], -1.0, 1.0)], |g, v| {
            g.avg_pool2d(v[0], 2)
        }),
        Case::new("avg_pool2d(3)", vec![uniform(r, &[1, 1, 6, 6], -1.0, 1.0)], |g, v| g.avg_pool2d(v[0], 3)),
        Case::new("global_avg_pool", vec![uniform(r, &[2, 3, 3, 4], -1.0, 1.0)], |g, v| {
            g.global_avg_pool(v[0])
        }),
        Case::new("reshape", vec![uniform(r, &[2, 6], -1.0, 1.0)], |g, v| g.reshape(v[0], &[3, 4])),
        Case::new("slice_cols", vec![uniform(r, &[3, 6], -1.0, 1.0)], |g, v| g.slice_cols(v[0], 1, 4)),
        Case::new("concat_cols", vec![uniform(r, &[3, 2], -1.0, 1.0), uniform(r, &[3, 3], -1.0, 1.0)], |g, v| {
            g.concat_cols(v[0], v[1])
        }),
        Case::new("gather", vec![uniform(r, &[4, 5], -1.0, 1.0)], move |g, v| g.gather(v[0], &gather_idx)),
        Case::new(
            "cosine_rows",
            vec![signed_away_from_zero(r, &[4, 6], 0.2, 1.0), signed_away_from_zero(r, &[4, 6], 0.2, 1.0)],
            |g, v| g.cosine_rows(v[0], v[1], ORTHOGONALITY_EPS),
        ),
    ]);
    cases
}

/// Confident rows alternate with diffuse ones.
fn pseudo_source(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let mut t = simplex_rows(rng, rows, cols);
    for i in (0..rows).step_by(2) {
        let k = rng.random_range(0..cols);
        for c in 0..cols {
            t.data_mut()[i * cols + c] = if c == k { 0.91 } else { 0.09 / (cols - 1) as f64 };
        }
    }
    t
}

/// One case per loss. Probabilities come from a softmax over free logits,
/// except for the direct cross-entropy case.
pub fn loss_cases(seed: u64) -> Vec<Case> {
    let mut r = stream_rng(seed, &[0x4c53]);
    let r = &mut r;
    let (b, c) = (4, 5);
    let y = labels(r, b, c);
    let y_s = labels(r, 3, c);
    let y_t = labels(r, 2, c);
    let probs_u = pseudo_source(r, 5, 4);
    let probs_u_total = pseudo_source(r, 3, c);
    let tau = 0.6;

    let (ys, yt) = (y_s.clone(), y_t.clone());
    let mut cases = vec![
        {
            let y = y.clone();
            Case::new("cross_entropy(softmax)", vec![uniform(r, &[b, c], -2.0, 2.0)], move |g, v| {
                let p = g.softmax(v[0])?;
                cross_entropy(g, p, &y)
            })
        },
        Case::new("cross_entropy(probabilities)", vec![simplex_rows(r, b, c)], move |g, v| {
            cross_entropy(g, v[0], &y)
        }),
        Case::new(
            "classification_loss",
            vec![uniform(r, &[3, c], -2.0, 2.0), uniform(r, &[2, c], -2.0, 2.0)],
            move |g, v| {
                let ps = g.softmax(v[0])?;
                let pt = g.softmax(v[1])?;
                classification_loss(g, ps, &ys, pt, &yt)
            },
        ),
        Case::new(
            "domain_loss_labelled",
            vec![uniform(r, &[3, 2], -2.0, 2.0), uniform(r, &[2, 2], -2.0, 2.0)],
            |g, v| {
                let a = g.softmax(v[0])?;
                let b = g.softmax(v[1])?;
                domain_loss_labelled(g, a, b)
            },
        ),
        Case::new(
            "domain_loss_unlabelled",
            vec![uniform(r, &[3, 2], -2.0, 2.0), uniform(r, &[3, 2], -2.0, 2.0)],
            |g, v| {
                let a = g.softmax(v[0])?;
                let b = g.softmax(v[1])?;
                domain_loss_unlabelled(g, a, b)
            },
        ),
        Case::new(
            "orthogonality_loss",
            vec![signed_away_from_zero(r, &[4, 3], 0.2, 1.0), signed_away_from_zero(r, &[4, 3], 0.2, 1.0)],
            |g, v| orthogonality_loss(g, v[0], v[1]),
        ),
        Case::new(
            "orthogonality_loss(non-negative)",
            vec![uniform(r, &[4, 3], 0.05, 1.0), uniform(r, &[4, 3], 0.05, 1.0)],
            |g, v| orthogonality_loss(g, v[0], v[1]),
        ),
        Case::new(
            "paired_orthogonality_loss",
            (0..4).map(|_| signed_away_from_zero(r, &[3, 4], 0.2, 1.0)).collect(),
            |g, v| paired_orthogonality_loss(g, (v[0], v[1]), (v[2], v[3])),
        ),
        Case::new("pseudo_label_loss", vec![uniform(r, &[5, 4], -2.0, 2.0)], move |g, v| {
            let p = g.softmax(v[0])?;
            Ok(pseudo_label_loss(g, &probs_u, p, tau)?.0)
        }),
    ];

    // The unweighted total over shared embeddings, as in one training step.
    let (ys, yt) = (y_s, y_t);
    cases.push(Case::new(
        "total_loss",
        vec![
            signed_away_from_zero(r, &[3, 6], 0.2, 1.0),
            signed_away_from_zero(r, &[2, 6], 0.2, 1.0),
            signed_away_from_zero(r, &[3, 6], 0.2, 1.0),
            signed_away_from_zero(r, &[3, 6], 0.2, 1.0),
            uniform(r, &[c, 3], -1.0, 1.0),
            uniform(r, &[2, 3], -1.0, 1.0),
        ],
        move |g, v| {
            // v[0..4]: embeddings of S, T, U, Û; v[4]: task head; v[5]: domain head.
            let halves = |g: &mut Graph<f64>, z: Var| -> Result<(Var, Var)> {
                Ok((g.slice_cols(z, 0, 3)?, g.slice_cols(z, 3, 6)?))
            };
            let (s, t, u, uh) = (halves(g, v[0])?, halves(g, v[1])?, halves(g, v[2])?, halves(g, v[3])?);
            let task_head = g.transpose(v[4])?;
            let dom_head = g.transpose(v[5])?;
            let task = |g: &mut Graph<f64>, z: Var| -> Result<Var> {
                let l = g.matmul(z, task_head)?;
                g.softmax(l)
            };
            let dom = |g: &mut Graph<f64>, z: Var| -> Result<Var> {
                let l = g.matmul(z, dom_head)?;
                g.softmax(l)
            };
            let (ps, pt) = (task(g, s.0)?, task(g, t.0)?);
            let (ds, dt) = (dom(g, s.1)?, dom(g, t.1)?);
            let (du, duh) = (dom(g, u.1)?, dom(g, uh.1)?);
            let puh = task(g, uh.0)?;
            let terms = LossTerms {
                cl_st: Some(classification_loss(g, ps, &ys, pt, &yt)?),
                dom_st: Some(domain_loss_labelled(g, ds, dt)?),
                dom_uu: Some(domain_loss_unlabelled(g, du, duh)?),
                orth_st: Some(paired_orthogonality_loss(g, s, t)?),
                orth_uu: Some(paired_orthogonality_loss(g, u, uh)?),
                pl_u: Some(pseudo_label_loss(g, &probs_u_total, puh, tau)?.0),
            };
            total_loss(g, &terms, LossToggles::ALL)
        },
    ));
    cases
}

/// Outcome of a whole-model check.
#[derive(Debug, Clone, Copy)]
pub struct ModelCheck {
    pub max_error: f64,
    /// Draws rejected because a kink or threshold lay within reach of the step.
    pub rejected: usize,
    pub retained: usize,
}

fn tiny_arch(relu_embedding: bool) -> Architecture {
    Architecture {
        model: ModelConfig {
            channels: vec![2],
            kernel_size: 3,
            stride: 1,
            padding: 1,
            pool: 1,
            embed_dim: 4,
            relu_embedding,
        },
        num_classes: 3,
        source: Geometry {
            channels: 2,
            height: 3,
            width: 3,
        },
        target: Geometry {
            channels: 1,
            height: 3,
            width: 3,
        },
    }
}

/// Minimum over rows of the distance of the top probability to `tau` and to
/// the runner-up.
fn pseudo_margin(probs: &Tensor<f64>, tau: f64) -> f64 {
    let c = probs.shape()[1];
    probs
        .data()
        .chunks_exact(c)
        .map(|row| {
            let mut sorted = row.to_vec();
            sorted.sort_by(|a, b| b.total_cmp(a));
            (sorted[0] - tau).abs().min(sorted[0] - sorted[1])
        })
        .fold(f64::INFINITY, f64::min)
}

/// Smallest row norm of either embedding half over all four batches. The
/// cosine's curvature grows as the norm shrinks.
fn min_half_norm(model: &SheddModel<f64>, batch: &StepBatch<f64>) -> Result<f64> {
    let (u, uhat) = batch.unlabelled.as_ref().expect("unlabelled batch");
    let mut s = Session::no_grad(&model.params);
    let mut worst = f64::INFINITY;
    for (encoder, x) in [
        (&model.source, &batch.x_s),
        (&model.target, &batch.x_t),
        (&model.target, u),
        (&model.target, uhat),
    ] {
        let xv = s.input(x.clone());
        let pair = encoder.encode(&mut s, xv)?;
        for half in [pair.inv, pair.spe] {
            let t = s.graph.value(half);
            let d = t.shape()[1];
            for row in t.data().chunks_exact(d) {
                worst = worst.min(row.iter().map(|v| v * v).sum::<f64>().sqrt());
            }
        }
    }
    Ok(worst)
}

/// Every parameter gradient of the six-term objective of a tiny dual-encoder
/// model against central differences. Draws whose ReLU inputs or
/// pseudo-label decisions sit within reach of the step are redrawn, since
/// differences across a kink measure a different one-sided slope.
pub fn model_step_check(seed: u64, relu_embedding: bool) -> Result<ModelCheck> {
    let tau = 0.45;
    let arch = tiny_arch(relu_embedding);
    for attempt in 0..500 {
        let r = &mut stream_rng(seed, &[0x4d4f, attempt]);
        let mut model = SheddModel::<f64>::new(arch.clone(), r.random())?;
        let task_w = model.task.layer.weight;
        let sharpened: Vec<f64> = model.params.peek(task_w).data().iter().map(|w| 4.0 * w).collect();
        model.params.get_mut(task_w).data_mut().copy_from_slice(&sharpened);
        // Zero biases would pin dead units exactly on a kink.
        for id in model.params.ids().collect::<Vec<_>>() {
            if model.params.name(id).ends_with(".bias") {
                let n = model.params.peek(id).numel();
                let b = uniform(r, &[n], -0.3, 0.3);
                model.params.set(id, b)?;
            }
        }

        let batch = StepBatch {
            x_s: uniform(r, &[2, 2, 3, 3], 0.0, 1.0),
            y_s: labels(r, 2, 3),
            x_t: uniform(r, &[2, 1, 3, 3], 0.0, 1.0),
            y_t: labels(r, 2, 3),
            unlabelled: Some((uniform(r, &[2, 1, 3, 3], 0.0, 1.0), uniform(r, &[2, 1, 3, 3], 0.0, 1.0))),
        };
        let (u, _) = batch.unlabelled.as_ref().unwrap();
        if pseudo_margin(&model.predict_proba(Domain::Target, u)?, tau) < 0.02
            || min_half_norm(&model, &batch)? < 0.2
        {
            continue;
        }

        let mut s = Session::new(&model.params);
        let fwd = forward_losses(&model, &mut s, &batch, LossToggles::ALL, tau)?;
        if fwd.retained == 0 || s.graph.relu_margin().is_some_and(|m| m < 5.0 * STEP) {
            continue;
        }
        s.backward(fwd.total)?;
        let mut grads = s.gradients();
        grads.fill_missing_with_zeros(&model.params);
        drop(s);

        let mut worst: f64 = 0.0;
        for id in model.params.ids() {
            let numeric = finite_diff_grad(
                |p| {
                    let mut probe = model.clone();
                    probe.params.set(id, p.clone())?;
                    let mut s = Session::no_grad(&probe.params);
                    let f = forward_losses(&probe, &mut s, &batch, LossToggles::ALL, tau)?;
                    Ok(s.graph.value(f.total).data()[0])
                },
                model.params.peek(id),
                STEP,
            )?;
            worst = worst.max(relative_error(grads.get(id).unwrap(), numeric.data(), FLOOR));
        }
        return Ok(ModelCheck {
            max_error: worst,
            rejected: attempt as usize,
            retained: fwd.retained,
        });
    }
    panic!("no admissible draw for seed {seed}");
}
