use crate::augment::{augment, AugmentConfig};
use crate::error::{contract_err, Result};
use crate::losses::{
    classification_loss, domain_loss_labelled, domain_loss_unlabelled, paired_orthogonality_loss,
    pseudo_label_loss, total_loss, LossBundle, LossTerms, LossToggles,
};
use crate::model::SheddModel;
use crate::nn::{AdamWState, EmaState, Session};
use crate::rng::stream_rng;
use crate::tensor::{Element, Tensor, Var};

/// Three aligned batches: labelled source, labelled target and unlabelled
/// target together with its strong view. The unlabelled pair may be omitted
/// when no enabled term consumes it.
#[derive(Debug, Clone)]
pub struct StepBatch<T: Element = f32> {
    pub x_s: Tensor<T>,
    pub y_s: Vec<usize>,
    pub x_t: Tensor<T>,
    pub y_t: Vec<usize>,
    pub unlabelled: Option<(Tensor<T>, Tensor<T>)>,
}

impl<T: Element> StepBatch<T> {
    fn check(&self, toggles: LossToggles) -> Result<()> {
        let b = self.x_s.shape()[0];
        let mut sizes = vec![
            ("source labels", self.y_s.len()),
            ("target images", self.x_t.shape()[0]),
            ("target labels", self.y_t.len()),
        ];
        match (&self.unlabelled, toggles.needs_unlabelled()) {
            (Some((u, uhat)), _) => {
                if u.shape() != uhat.shape() {
                    return Err(contract_err!(
                        "augmented batch {:?} differs from unlabelled batch {:?}",
                        uhat.shape(),
                        u.shape()
                    ));
                }
                sizes.push(("unlabelled images", u.shape()[0]));
            }
            (None, true) => {
                return Err(contract_err!("enabled terms need the unlabelled batch"));
            }
            (None, false) => {}
        }
        for (what, n) in sizes {
            if n != b {
                return Err(contract_err!(
                    "misaligned batches: {b} source images but {n} {what}"
                ));
            }
        }
        Ok(())
    }
}

/// Graph handles of one forward pass through the loss.
#[derive(Debug, Clone, Copy)]
pub struct StepForward {
    pub total: Var,
    pub terms: LossTerms,
    pub retained: usize,
    pub unlabelled: usize,
}

/// Encodes the batches and builds every enabled loss term inside `s`.
///
/// Pseudo-labels come from the value of `f(z_inv_u)`, so no gradient reaches
/// that branch.
pub fn forward_losses<T: Element>(
    model: &SheddModel<T>,
    s: &mut Session<'_, T>,
    batch: &StepBatch<T>,
    toggles: LossToggles,
    tau: f64,
) -> Result<StepForward> {
    batch.check(toggles)?;
    let xs = s.input(batch.x_s.clone());
    let xt = s.input(batch.x_t.clone());
    let es = model.source.encode(s, xs)?;
    let et = model.target.encode(s, xt)?;

    let mut terms = LossTerms::default();
    if toggles.cl_st {
        let ps = model.task.forward(s, es.inv)?;
        let pt = model.task.forward(s, et.inv)?;
        terms.cl_st = Some(classification_loss(&mut s.graph, ps, &batch.y_s, pt, &batch.y_t)?);
    }
    if toggles.dom_st {
        let ds = model.domain.forward(s, es.spe)?;
        let dt = model.domain.forward(s, et.spe)?;
        terms.dom_st = Some(domain_loss_labelled(&mut s.graph, ds, dt)?);
    }
    if toggles.orth_st {
        terms.orth_st = Some(paired_orthogonality_loss(
            &mut s.graph,
            (es.inv, es.spe),
            (et.inv, et.spe),
        )?);
    }

    let (mut retained, mut unlabelled) = (0, 0);
    if let (Some((u, uhat)), true) = (&batch.unlabelled, toggles.needs_unlabelled()) {
        let xu = s.input(u.clone());
        let xuhat = s.input(uhat.clone());
        let eu = model.target.encode(s, xu)?;
        let euhat = model.target.encode(s, xuhat)?;
        if toggles.dom_uu {
            let du = model.domain.forward(s, eu.spe)?;
            let duhat = model.domain.forward(s, euhat.spe)?;
            terms.dom_uu = Some(domain_loss_unlabelled(&mut s.graph, du, duhat)?);
        }
        if toggles.orth_uu {
            terms.orth_uu = Some(paired_orthogonality_loss(
                &mut s.graph,
                (eu.inv, eu.spe),
                (euhat.inv, euhat.spe),
            )?);
        }
        if toggles.pl_u {
            let pu = model.task.forward(s, eu.inv)?;
            let probs_u = s.graph.value(pu).clone();
            let puhat = model.task.forward(s, euhat.inv)?;
            let (loss, kept) = pseudo_label_loss(&mut s.graph, &probs_u, puhat, tau)?;
            terms.pl_u = Some(loss);
            retained = kept;
            unlabelled = probs_u.shape()[0];
        }
    }
    let total = total_loss(&mut s.graph, &terms, toggles)?;
    Ok(StepForward {
        total,
        terms,
        retained,
        unlabelled,
    })
}

/// One optimisation step: forward, backward, AdamW, EMA update.
/// Parameters the loss does not reach receive a zero gradient.
pub fn train_step<T: Element>(
    model: &mut SheddModel<T>,
    optimizer: &mut AdamWState<T>,
    ema: &mut EmaState<T>,
    batch: &StepBatch<T>,
    toggles: LossToggles,
    tau: f64,
) -> Result<LossBundle> {
    let (bundle, mut grads) = {
        let mut s = Session::new(&model.params);
        let fwd = forward_losses(model, &mut s, batch, toggles, tau)?;
        let mut bundle = LossBundle::from_terms(&s.graph, &fwd.terms, fwd.total);
        bundle.retained_count = fwd.retained;
        bundle.unlabelled_count = fwd.unlabelled;
        if s.graph.requires_grad(fwd.total) {
            s.backward(fwd.total)?;
        }
        (bundle, s.gradients())
    };
    grads.fill_missing_with_zeros(&model.params);
    optimizer.step(&mut model.params, &grads)?;
    ema.update(&model.params)?;
    Ok(bundle)
}

/// Strong views of a `[b,c,h,w]` batch; sample `i` uses the stream
/// `(seed, path.., i)`.
pub fn strong_views(
    x_u: &Tensor<f32>,
    cfg: &AugmentConfig,
    range: (f32, f32),
    seed: u64,
    path: &[u64],
) -> Result<Tensor<f32>> {
    let shape = x_u.shape().to_vec();
    let per = x_u.numel() / shape[0];
    let mut out = Vec::with_capacity(x_u.numel());
    let mut full_path = path.to_vec();
    full_path.push(0);
    for i in 0..shape[0] {
        *full_path.last_mut().unwrap() = i as u64;
        let mut rng = stream_rng(seed, &full_path);
        let img = Tensor::from_slice(&shape[1..], &x_u.data()[i * per..(i + 1) * per])?;
        out.extend(augment(&img, cfg, range, &mut rng)?.into_data());
    }
    Tensor::new(shape, out)
}
