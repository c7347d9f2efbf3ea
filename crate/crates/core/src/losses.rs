//! The four training objectives and their unweighted sum.
//!
//! All terms are batch means. Probabilities are softmax outputs; `log` clamps
//! at `1e-12`.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::model::Domain;
use crate::tensor::{Element, Graph, Tensor, Var};

/// Denominator guard of the cosine similarity.
pub const ORTHOGONALITY_EPS: f64 = 1e-8;

/// `mean_i -log(probs[i, labels[i]])`.
pub fn cross_entropy<T: Element>(g: &mut Graph<T>, probs: Var, labels: &[usize]) -> Result<Var> {
    let picked = g.gather(probs, labels)?;
    let logs = g.log(picked);
    let mean = g.mean(logs, None)?;
    Ok(g.scale(mean, -T::one()))
}

/// Average of source and target cross-entropy.
pub fn classification_loss<T: Element>(
    g: &mut Graph<T>,
    probs_s: Var,
    labels_s: &[usize],
    probs_t: Var,
    labels_t: &[usize],
) -> Result<Var> {
    let ce_s = cross_entropy(g, probs_s, labels_s)?;
    let ce_t = cross_entropy(g, probs_t, labels_t)?;
    half_sum(g, ce_s, ce_t)
}

fn half_sum<T: Element>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let s = g.add(a, b)?;
    Ok(g.scale(s, T::of(0.5)))
}

fn domain_ce<T: Element>(g: &mut Graph<T>, dom_probs: Var, domain: Domain) -> Result<Var> {
    let rows = g.value(dom_probs).shape()[0];
    cross_entropy(g, dom_probs, &vec![domain.label(); rows])
}

/// Domain classifier loss on labelled data: source samples carry the source
/// tag and target samples the target tag.
pub fn domain_loss_labelled<T: Element>(g: &mut Graph<T>, dom_s: Var, dom_t: Var) -> Result<Var> {
    let a = domain_ce(g, dom_s, Domain::Source)?;
    let b = domain_ce(g, dom_t, Domain::Target)?;
    half_sum(g, a, b)
}

/// Domain classifier loss on unlabelled data and its augmentation, both
/// tagged as target.
pub fn domain_loss_unlabelled<T: Element>(
    g: &mut Graph<T>,
    dom_u: Var,
    dom_uhat: Var,
) -> Result<Var> {
    let a = domain_ce(g, dom_u, Domain::Target)?;
    let b = domain_ce(g, dom_uhat, Domain::Target)?;
    half_sum(g, a, b)
}

/// Batch mean of the cosine similarity between the two embedding halves.
pub fn orthogonality_loss<T: Element>(g: &mut Graph<T>, z_inv: Var, z_spe: Var) -> Result<Var> {
    let cos = g.cosine_rows(z_inv, z_spe, T::of(ORTHOGONALITY_EPS))?;
    g.mean(cos, None)
}

/// Average of the orthogonality loss over two batches.
pub fn paired_orthogonality_loss<T: Element>(
    g: &mut Graph<T>,
    (inv_a, spe_a): (Var, Var),
    (inv_b, spe_b): (Var, Var),
) -> Result<Var> {
    let a = orthogonality_loss(g, inv_a, spe_a)?;
    let b = orthogonality_loss(g, inv_b, spe_b)?;
    half_sum(g, a, b)
}

/// Confidence mask and hard labels from detached probabilities: sample `i` is
/// retained iff `max_c probs[i,c] > tau`.
pub fn pseudo_labels<T: Element>(probs_u: &Tensor<T>, tau: f64) -> Result<(Vec<bool>, Vec<usize>)> {
    check_tau(tau)?;
    let (max, labels) = probs_u.max(Some(1))?;
    let mask = max.data().iter().map(|&p| p.as_f64() > tau).collect();
    Ok((mask, labels))
}

fn check_tau(tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("pseudo-label threshold must lie in [0,1], got {tau}")));
    }
    Ok(())
}

/// `(1/b) sum_i m_i CE(probs_uhat[i], argmax probs_u[i])`.
///
/// `probs_u` is a plain tensor: gradients flow only through `probs_uhat`.
/// Returns the loss and the number of retained samples. When nothing is
/// retained the loss is a constant zero with no graph behind it.
pub fn pseudo_label_loss<T: Element>(
    g: &mut Graph<T>,
    probs_u: &Tensor<T>,
    probs_uhat: Var,
    tau: f64,
) -> Result<(Var, usize)> {
    if probs_u.shape() != g.value(probs_uhat).shape() {
        return Err(shape_err!(
            "pseudo-label batches differ: {:?} vs {:?}",
            probs_u.shape(),
            g.value(probs_uhat).shape()
        ));
    }
    let (mask, labels) = pseudo_labels(probs_u, tau)?;
    let retained = mask.iter().filter(|&&m| m).count();
    if retained == 0 {
        return Ok((g.constant(Tensor::scalar(T::zero())), 0));
    }
    let b = mask.len();
    let picked = g.gather(probs_uhat, &labels)?;
    let logs = g.log(picked);
    let weights = Tensor::new(
        vec![b],
        mask.iter().map(|&m| if m { T::one() } else { T::zero() }).collect(),
    )?;
    let weights = g.constant(weights);
    let masked = g.mul(logs, weights)?;
    let total = g.sum(masked, None)?;
    Ok((g.scale(total, T::of(-1.0 / b as f64)), retained))
}

/// Which of the six terms enter the total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossToggles {
    pub cl_st: bool,
    pub orth_st: bool,
    pub dom_st: bool,
    pub orth_uu: bool,
    pub dom_uu: bool,
    pub pl_u: bool,
}

impl LossToggles {
    pub const ALL: LossToggles = LossToggles {
        cl_st: true,
        orth_st: true,
        dom_st: true,
        orth_uu: true,
        dom_uu: true,
        pl_u: true,
    };

    pub const NONE: LossToggles = LossToggles {
        cl_st: false,
        orth_st: false,
        dom_st: false,
        orth_uu: false,
        dom_uu: false,
        pl_u: false,
    };

    /// From a bit pattern in column order cl, orth_st, dom_st, orth_uu, dom_uu, pl.
    pub fn from_bits(bits: u8) -> Self {
        let on = |i: u8| bits & (1 << i) != 0;
        Self {
            cl_st: on(0),
            orth_st: on(1),
            dom_st: on(2),
            orth_uu: on(3),
            dom_uu: on(4),
            pl_u: on(5),
        }
    }

    pub fn as_array(&self) -> [bool; 6] {
        [self.cl_st, self.orth_st, self.dom_st, self.orth_uu, self.dom_uu, self.pl_u]
    }

    /// Whether any term needs the unlabelled/augmented passes.
    pub fn needs_unlabelled(&self) -> bool {
        self.orth_uu || self.dom_uu || self.pl_u
    }
}

/// Graph nodes of the enabled terms; disabled ones are `None`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossTerms {
    pub cl_st: Option<Var>,
    pub dom_st: Option<Var>,
    pub dom_uu: Option<Var>,
    pub orth_st: Option<Var>,
    pub orth_uu: Option<Var>,
    pub pl_u: Option<Var>,
}

impl LossTerms {
    fn in_order(&self) -> [Option<Var>; 6] {
        [self.cl_st, self.dom_st, self.dom_uu, self.orth_st, self.orth_uu, self.pl_u]
    }
}

/// Unweighted sum of the enabled terms. A term whose toggle is off is ignored
/// even if present.
pub fn total_loss<T: Element>(g: &mut Graph<T>, terms: &LossTerms, toggles: LossToggles) -> Result<Var> {
    let enabled = [
        toggles.cl_st,
        toggles.dom_st,
        toggles.dom_uu,
        toggles.orth_st,
        toggles.orth_uu,
        toggles.pl_u,
    ];
    let mut total: Option<Var> = None;
    for (term, on) in terms.in_order().into_iter().zip(enabled) {
        if let (Some(v), true) = (term, on) {
            total = Some(match total {
                Some(acc) => g.add(acc, v)?,
                None => v,
            });
        }
    }
    Ok(total.unwrap_or_else(|| g.constant(Tensor::scalar(T::zero()))))
}

/// Scalar values of one step's terms. Disabled terms are `0`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub cl_st: f64,
    pub dom_st: f64,
    pub dom_uu: f64,
    pub orth_st: f64,
    pub orth_uu: f64,
    pub pl_u: f64,
    pub total: f64,
    /// Unlabelled samples whose pseudo-label passed the threshold.
    pub retained_count: usize,
    /// Unlabelled samples considered (0 when the pseudo-label branch did not run).
    pub unlabelled_count: usize,
}

impl LossBundle {
    pub fn from_terms<T: Element>(g: &Graph<T>, terms: &LossTerms, total: Var) -> Self {
        let v = |t: Option<Var>| t.map_or(0.0, |v| g.value(v).data()[0].as_f64());
        Self {
            cl_st: v(terms.cl_st),
            dom_st: v(terms.dom_st),
            dom_uu: v(terms.dom_uu),
            orth_st: v(terms.orth_st),
            orth_uu: v(terms.orth_uu),
            pl_u: v(terms.pl_u),
            total: g.value(total).data()[0].as_f64(),
            retained_count: 0,
            unlabelled_count: 0,
        }
    }

    pub fn components(&self) -> [f64; 6] {
        [self.cl_st, self.dom_st, self.dom_uu, self.orth_st, self.orth_uu, self.pl_u]
    }
}
