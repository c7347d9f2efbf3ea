//! Independent reference computations: loss values, a hand-evaluated
//! training step, a brute-force weighted F1 and the EMA closed form.

use rand::Rng;
use shedd::eval::weighted_f1;
use shedd::losses::{cross_entropy, orthogonality_loss, pseudo_label_loss, pseudo_labels, LossToggles};
use shedd::model::{Architecture, Geometry, ModelConfig, SheddModel};
use shedd::nn::{AdamWConfig, AdamWState, EmaState, ParamStore};
use shedd::rng::stream_rng;
use shedd::tensor::{Graph, Tensor};
use shedd::trainer::{train_step, StepBatch};

use super::{simplex_rows, Verdict};

fn scalar(g: &Graph<f64>, v: shedd::tensor::Var) -> f64 {
    g.value(v).data()[0]
}

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_slice(shape, data).unwrap()
}

/// Cross-entropy, orthogonality and pseudo-label values against closed forms,
/// and the confidence mask against a recount.
pub fn loss_values() -> Verdict {
    let mut notes = Vec::new();
    let mut g = Graph::<f64>::new();
    let p = g.constant(t(&[1, 8], &[0.125; 8]));
    let ce = cross_entropy(&mut g, p, &[5]).unwrap();
    let ce = scalar(&g, ce);
    let err = (ce - 8f64.ln()).abs();
    if err > 1e-5 {
        return Err(format!("cross_entropy(uniform, C=8) = {ce}, expected ln 8"));
    }
    notes.push(format!("ce err {err:.1e}"));

    for (a, b, expected) in [
        ([1.0, 0.0], [1.0, 0.0], 1.0),
        ([1.0, 0.0], [0.0, 1.0], 0.0),
        ([1.0, 0.0], [-1.0, 0.0], -1.0),
    ] {
        let za = g.constant(t(&[1, 2], &a));
        let zb = g.constant(t(&[1, 2], &b));
        let v = orthogonality_loss(&mut g, za, zb).unwrap();
        let v = scalar(&g, v);
        if (v - expected).abs() > 1e-6 {
            return Err(format!("orthogonality({a:?}, {b:?}) = {v}, expected {expected}"));
        }
    }

    let probs_u = t(&[2, 2], &[0.96, 0.04, 0.60, 0.40]);
    let probs_uhat = g.constant(t(&[2, 2], &[0.5, 0.5, 0.9, 0.1]));
    let (loss, kept) = pseudo_label_loss(&mut g, &probs_u, probs_uhat, 0.95).unwrap();
    let v = scalar(&g, loss);
    let expected = 0.5 * 2f64.ln();
    if kept != 1 || (v - expected).abs() > 1e-5 {
        return Err(format!("pseudo_label_loss hand case: {v} with {kept} retained, expected {expected} with 1"));
    }

    // Batches of 10 rows; the threshold of every other batch equals one of
    // its row maxima so the strict comparison is exercised.
    let mut rng = stream_rng(2, &[0x4d53]);
    let mut rows = 0;
    let mut retained = 0;
    while rows < 1000 {
        let c = rng.random_range(2..=10);
        let probs = simplex_rows(&mut rng, 10, c);
        let maxima: Vec<f64> = probs
            .data()
            .chunks_exact(c)
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let tau = if (rows / 10) % 2 == 0 {
            maxima[rng.random_range(0..10)]
        } else {
            rng.random_range(0.0..1.0)
        };
        let (mask, labels) = pseudo_labels(&probs, tau).unwrap();
        for (i, row) in probs.data().chunks_exact(c).enumerate() {
            let mut best = 0;
            let mut keep = false;
            for k in 0..c {
                if row[k] > row[best] {
                    best = k;
                }
                if row[k] > tau {
                    keep = true;
                }
            }
            if mask[i] != keep || labels[i] != best {
                return Err(format!("mask recount differs at row {} (tau {tau})", rows + i));
            }
            retained += keep as usize;
        }
        rows += 10;
    }
    notes.push(format!("{rows} mask rows, {retained} retained"));
    Ok(notes.join(", "))
}

/// The fixed 2-sample toy problem of the step oracle.
pub struct Toy {
    pub model: SheddModel<f64>,
    pub batch: StepBatch<f64>,
    pub tau: f64,
}

const PIXELS: usize = 4;

pub fn toy() -> Toy {
    let arch = Architecture {
        model: ModelConfig {
            channels: vec![2],
            kernel_size: 1,
            stride: 1,
            padding: 0,
            pool: 1,
            embed_dim: 4,
            relu_embedding: true,
        },
        num_classes: 2,
        source: Geometry {
            channels: 2,
            height: 2,
            width: 2,
        },
        target: Geometry {
            channels: 1,
            height: 2,
            width: 2,
        },
    };
    let mut model = SheddModel::<f64>::new(arch, 0).unwrap();
    for (k, id) in model.params.ids().collect::<Vec<_>>().into_iter().enumerate() {
        let n = model.params.peek(id).numel();
        let values: Vec<f64> = (0..n)
            .map(|i| 0.9 * (1.7 * i as f64 + 2.3 * k as f64 + 2.0).sin() + 0.25)
            .collect();
        let shape = model.params.peek(id).shape().to_vec();
        model.params.set(id, Tensor::new(shape, values).unwrap()).unwrap();
    }
    // Target path written out so both pseudo-label outcomes occur.
    for (name, values) in [
        ("target.conv0.kernel", &[2.0, -1.5][..]),
        ("target.conv0.bias", &[-0.3, 1.0]),
        ("target.proj.weight", &[1.2, -0.4, -0.5, 0.9, 0.3, 0.6, 0.8, -0.7]),
        ("target.proj.bias", &[0.05, 0.1, -0.1, 0.2]),
        ("task.weight", &[2.0, -1.5, -1.0, 2.5]),
        ("task.bias", &[0.1, -0.1]),
    ] {
        let id = model.params.find(name).unwrap();
        model.params.get_mut(id).data_mut().copy_from_slice(values);
    }
    let img = |c: usize, phase: f64| -> Vec<f64> {
        (0..c * PIXELS).map(|i| 0.5 + 0.45 * (0.9 * i as f64 + phase).cos()).collect()
    };
    let stack = |imgs: Vec<Vec<f64>>, c: usize| -> Tensor<f64> {
        Tensor::new(vec![imgs.len(), c, 2, 2], imgs.concat()).unwrap()
    };
    let u = vec![img(1, 0.3), vec![0.05, 0.9, 0.1, 0.6]];
    // A photometric view: kernel-1 features after global pooling would not
    // see a flip.
    let uhat = u
        .iter()
        .map(|x| x.iter().map(|v| 1.0 - v).collect())
        .collect::<Vec<_>>();
    Toy {
        model,
        batch: StepBatch {
            x_s: stack(vec![img(2, 0.0), img(2, 1.1)], 2),
            y_s: vec![0, 1],
            x_t: stack(vec![img(1, 0.7), img(1, 2.9)], 1),
            y_t: vec![1, 0],
            unlabelled: Some((stack(u, 1), stack(uhat, 1))),
        },
        tau: 0.7,
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Plain-arithmetic evaluation of the six loss terms of the toy problem.
pub struct HandTerms {
    /// In the order cl, dom_ST, dom_UÛ, orth_ST, orth_UÛ, pl.
    pub terms: [f64; 6],
    pub retained: usize,
}

pub fn hand_terms(toy: &Toy) -> HandTerms {
    let p = &toy.model.params;
    let get = |name: &str| p.peek(p.find(name).unwrap()).data().to_vec();

    // kernel-1 conv -> relu -> pointwise projection -> relu -> spatial mean
    let encode = |prefix: &str, x: &[f64], c: usize| -> [f64; 4] {
        let kernel = get(&format!("{prefix}.conv0.kernel"));
        let cbias = get(&format!("{prefix}.conv0.bias"));
        let w = get(&format!("{prefix}.proj.weight"));
        let b = get(&format!("{prefix}.proj.bias"));
        let mut z = [0.0; 4];
        for pix in 0..PIXELS {
            let mut h = [0.0; 2];
            for (k, hk) in h.iter_mut().enumerate() {
                let mut acc = cbias[k];
                for ci in 0..c {
                    acc += kernel[k * c + ci] * x[ci * PIXELS + pix];
                }
                *hk = relu(acc);
            }
            for (j, zj) in z.iter_mut().enumerate() {
                *zj += relu(w[j * 2] * h[0] + w[j * 2 + 1] * h[1] + b[j]) / PIXELS as f64;
            }
        }
        z
    };
    let head = |name: &str, feats: &[f64]| -> [f64; 2] {
        let w = get(&format!("{name}.weight"));
        let b = get(&format!("{name}.bias"));
        let l0 = w[0] * feats[0] + w[1] * feats[1] + b[0];
        let l1 = w[2] * feats[0] + w[3] * feats[1] + b[1];
        let m = l0.max(l1);
        let (e0, e1) = ((l0 - m).exp(), (l1 - m).exp());
        [e0 / (e0 + e1), e1 / (e0 + e1)]
    };
    let cosine = |z: &[f64; 4]| -> f64 {
        let dot = z[0] * z[2] + z[1] * z[3];
        let na = (z[0] * z[0] + z[1] * z[1]).sqrt();
        let nb = (z[2] * z[2] + z[3] * z[3]).sqrt();
        dot / (na * nb + 1e-8)
    };
    let ce = |probs: [f64; 2], label: usize| -(probs[label].max(1e-12)).ln();

    let b = &toy.batch;
    let rows = |x: &Tensor<f64>| -> Vec<Vec<f64>> {
        let per = x.numel() / x.shape()[0];
        x.data().chunks_exact(per).map(<[f64]>::to_vec).collect()
    };
    let zs: Vec<[f64; 4]> = rows(&b.x_s).iter().map(|x| encode("source", x, 2)).collect();
    let zt: Vec<[f64; 4]> = rows(&b.x_t).iter().map(|x| encode("target", x, 1)).collect();
    let (u, uhat) = b.unlabelled.as_ref().unwrap();
    let zu: Vec<[f64; 4]> = rows(u).iter().map(|x| encode("target", x, 1)).collect();
    let zuh: Vec<[f64; 4]> = rows(uhat).iter().map(|x| encode("target", x, 1)).collect();
    let n = 2.0;

    let mean = |f: &dyn Fn(usize) -> f64| (f(0) + f(1)) / n;
    let cl = 0.5
        * (mean(&|i| ce(head("task", &zs[i][..2]), b.y_s[i]))
            + mean(&|i| ce(head("task", &zt[i][..2]), b.y_t[i])));
    let dom_st = 0.5
        * (mean(&|i| ce(head("domain", &zs[i][2..]), 0)) + mean(&|i| ce(head("domain", &zt[i][2..]), 1)));
    let dom_uu = 0.5
        * (mean(&|i| ce(head("domain", &zu[i][2..]), 1)) + mean(&|i| ce(head("domain", &zuh[i][2..]), 1)));
    let orth_st = 0.5 * (mean(&|i| cosine(&zs[i])) + mean(&|i| cosine(&zt[i])));
    let orth_uu = 0.5 * (mean(&|i| cosine(&zu[i])) + mean(&|i| cosine(&zuh[i])));
    let mut pl = 0.0;
    let mut retained = 0;
    for i in 0..2 {
        let pu = head("task", &zu[i][..2]);
        let label = if pu[1] > pu[0] { 1 } else { 0 };
        if pu[label] > toy.tau {
            retained += 1;
            pl += ce(head("task", &zuh[i][..2]), label);
        }
    }
    HandTerms {
        terms: [cl, dom_st, dom_uu, orth_st, orth_uu, pl / n],
        retained,
    }
}

fn toggle_array(t: LossToggles) -> [bool; 6] {
    [t.cl_st, t.dom_st, t.dom_uu, t.orth_st, t.orth_uu, t.pl_u]
}

/// One `train_step` per toggle pattern on the toy problem against the hand
/// evaluation, plus the component-sum invariant.
pub fn step_oracle() -> Verdict {
    let toy = toy();
    let hand = hand_terms(&toy);
    if hand.retained != 1 {
        return Err(format!("toy problem should retain exactly one pseudo-label, got {}", hand.retained));
    }
    let mut worst_hand: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    for bits in 0..64u8 {
        let toggles = LossToggles::from_bits(bits);
        let mut model = toy.model.clone();
        let mut opt = AdamWState::new(AdamWConfig::default(), &model.params);
        let mut ema = EmaState::new(&model.params, 0.95).unwrap();
        let bundle = train_step(&mut model, &mut opt, &mut ema, &toy.batch, toggles, toy.tau)
            .map_err(|e| format!("train_step failed for {toggles:?}: {e}"))?;
        let expected: f64 = hand
            .terms
            .iter()
            .zip(toggle_array(toggles))
            .filter(|(_, on)| *on)
            .map(|(v, _)| v)
            .sum();
        worst_hand = worst_hand.max((bundle.total - expected).abs());
        worst_sum = worst_sum.max((bundle.total - bundle.components().iter().sum::<f64>()).abs());
        if toggles == LossToggles::ALL && (bundle.total - expected).abs() > 1e-5 {
            return Err(format!("full step total {} vs hand {expected}", bundle.total));
        }
    }
    if worst_hand > 1e-5 {
        return Err(format!("a toggle pattern deviates from the hand total by {worst_hand:.2e}"));
    }
    if worst_sum > 1e-6 {
        return Err(format!("total differs from the component sum by {worst_sum:.2e}"));
    }
    Ok(format!(
        "hand total {:.6}, max deviation {worst_hand:.1e}, max sum gap {worst_sum:.1e} over 64 patterns",
        hand.terms.iter().sum::<f64>()
    ))
}

/// Per-class precision and recall from explicit counting, then
/// `sum_k support_k * 2PR/(P+R) / n`.
pub fn brute_weighted_f1(truth: &[usize], pred: &[usize], c: usize) -> f64 {
    let mut cm = vec![vec![0usize; c]; c];
    for (&t, &p) in truth.iter().zip(pred) {
        cm[t][p] += 1;
    }
    let n = truth.len() as f64;
    let mut total = 0.0;
    for k in 0..c {
        let tp = cm[k][k] as f64;
        let support: usize = cm[k].iter().sum();
        let predicted: usize = (0..c).map(|r| cm[r][k]).sum();
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = if support == 0 { 0.0 } else { tp / support as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        total += support as f64 * f1;
    }
    total / n
}

/// Largest deviation of `weighted_f1` from the brute force on 100 random
/// cases. Only floating-point rounding separates the two routes.
pub fn metric_oracle() -> Verdict {
    let mut rng = stream_rng(9, &[0x4631]);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let c = rng.random_range(2..=10);
        let n = rng.random_range(1..=200);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        // Mix of random and mostly-correct predictions.
        let skill = rng.random_range(0.0..1.0);
        let pred: Vec<usize> = truth
            .iter()
            .map(|&t| if rng.random_bool(skill) { t } else { rng.random_range(0..c) })
            .collect();
        let ours = weighted_f1(&truth, &pred, c).map_err(|e| e.to_string())?.weighted_f1;
        let brute = brute_weighted_f1(&truth, &pred, c);
        let diff = (ours - brute).abs();
        if diff > 1e-12 {
            return Err(format!("case {case}: {ours} vs brute force {brute}"));
        }
        worst = worst.max(diff);
    }
    Ok(format!("100 cases, max deviation {worst:.1e}"))
}

/// Shadow after `k` updates towards constant parameters `theta` from `s0`:
/// `m^k s0 + (1 - m^k) theta`.
pub fn ema_closed_form() -> Verdict {
    let momentum = 0.95;
    let mut worst: f64 = 0.0;
    for k in [1u32, 10, 100] {
        let mut store = ParamStore::<f32>::new();
        let s0 = [0.8f32, -1.5, 3.0, 0.0];
        let theta = [-0.4f32, 2.5, 3.0, 1.0];
        let id = store.insert("w", Tensor::from_slice(&[4], &s0).unwrap()).unwrap();
        let mut ema = EmaState::new(&store, momentum).unwrap();
        store.set(id, Tensor::from_slice(&[4], &theta).unwrap()).unwrap();
        for _ in 0..k {
            ema.update(&store).unwrap();
        }
        let decay = momentum.powi(k as i32);
        for ((&got, &a), &b) in ema.shadow()[0].data().iter().zip(&s0).zip(&theta) {
            let expected = decay * a as f64 + (1.0 - decay) * b as f64;
            let diff = (got as f64 - expected).abs();
            if diff > 1e-6 {
                return Err(format!("k={k}: shadow {got} vs closed form {expected}"));
            }
            worst = worst.max(diff);
        }
    }
    Ok(format!("k in {{1,10,100}}, max deviation {worst:.1e}"))
}
