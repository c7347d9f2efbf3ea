use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use crate::error::{contract_err, Result};
use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// AdamW with decoupled weight decay:
/// `theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)`.
#[derive(Debug, Clone)]
pub struct AdamWState<T = f32> {
    pub config: AdamWConfig,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Element> AdamWState<T> {
    pub fn new(config: AdamWConfig, params: &ParamStore<T>) -> Self {
        let zeros = || {
            params
                .ids()
                .map(|id| vec![T::zero(); params.peek(id).numel()])
                .collect::<Vec<_>>()
        };
        Self {
            config,
            first_moment: zeros(),
            second_moment: zeros(),
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<()> {
        if grads.len() != params.len() || self.first_moment.len() != params.len() {
            return Err(contract_err!(
                "optimizer tracks {} parameters, store has {}, gradients {}",
                self.first_moment.len(),
                params.len(),
                grads.len()
            ));
        }
        if let Some(id) = params.ids().find(|&id| grads.get(id).is_none()) {
            return Err(contract_err!("missing gradient for parameter {}", params.name(id)));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        for id in params.ids() {
            let g = grads.get(id).expect("checked above");
            let m = &mut self.first_moment[id.0];
            let v = &mut self.second_moment[id.0];
            let theta = params.get_mut(id).data_mut();
            for i in 0..theta.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                let m_hat = m[i].as_f64() / bias1;
                let v_hat = v[i].as_f64() / bias2;
                let th = theta[i].as_f64();
                let update = m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * th;
                theta[i] = T::of(th - c.lr * update);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamId;
    use crate::tensor::Tensor;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("theta", Tensor::from_slice(&[1], &[v]).unwrap()).unwrap();
        s
    }

    /// Direct transcription of the recurrences, independent of the state type.
    fn scripted(theta0: f64, grads: &[f64], c: AdamWConfig) -> f64 {
        let (mut m, mut v, mut th) = (0.0, 0.0, theta0);
        for (k, g) in grads.iter().enumerate() {
            let t = (k + 1) as i32;
            m = c.beta1 * m + (1.0 - c.beta1) * g;
            v = c.beta2 * v + (1.0 - c.beta2) * g * g;
            let mh = m / (1.0 - c.beta1.powi(t));
            let vh = v / (1.0 - c.beta2.powi(t));
            th -= c.lr * (mh / (vh.sqrt() + c.eps) + c.weight_decay * th);
        }
        th
    }

    #[test]
    fn zero_gradient_no_decay_is_noop() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut store = scalar_store(0.37);
        let mut opt = AdamWState::new(cfg, &store);
        let mut g = Gradients::empty(1);
        g.set(ParamId(0), vec![0.0]);
        for _ in 0..5 {
            opt.step(&mut store, &g).unwrap();
        }
        assert_eq!(store.peek(ParamId(0)).data(), &[0.37]);
    }

    #[test]
    fn single_step_moves_by_lr() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut store = ParamStore::<f32>::new();
        store.insert("theta", Tensor::from_slice(&[1], &[1.0]).unwrap()).unwrap();
        let mut opt = AdamWState::new(cfg, &store);
        let mut g = Gradients::empty(1);
        g.set(ParamId(0), vec![1.0]);
        opt.step(&mut store, &g).unwrap();
        let theta = store.peek(ParamId(0)).data()[0] as f64;
        assert!((theta - scripted(1.0, &[1.0], cfg)).abs() < 1e-7);
        assert!((theta - 0.9999).abs() < 1e-7);
    }

    #[test]
    fn two_steps_match_script() {
        let cfg = AdamWConfig::default();
        let mut store = scalar_store(0.8);
        let mut opt = AdamWState::new(cfg, &store);
        for g in [0.5, -1.25] {
            let mut grads = Gradients::empty(1);
            grads.set(ParamId(0), vec![g]);
            opt.step(&mut store, &grads).unwrap();
        }
        let expected = scripted(0.8, &[0.5, -1.25], cfg);
        assert!((store.peek(ParamId(0)).data()[0] - expected).abs() < 1e-7);
    }

    #[test]
    fn missing_gradient_is_contract_error() {
        let mut store = scalar_store(1.0);
        let mut opt = AdamWState::new(AdamWConfig::default(), &store);
        assert!(opt.step(&mut store, &Gradients::empty(1)).is_err());
        assert_eq!(opt.step, 0);
    }
}
