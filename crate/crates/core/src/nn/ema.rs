use super::params::ParamStore;
use crate::error::{contract_err, shape_err, Result};
use crate::tensor::{Element, Tensor};

/// Exponential moving average shadow of every parameter:
/// `shadow = m * shadow + (1 - m) * param`.
#[derive(Debug, Clone)]
pub struct EmaState<T: Element = f32> {
    pub momentum: f64,
    shadow: Vec<Tensor<T>>,
    swapped: bool,
}

/// Raw parameter values held while the EMA shadow is swapped in.
#[must_use = "the raw parameters are lost unless the token is restored"]
#[derive(Debug)]
pub struct EmaRestore<T: Element = f32> {
    raw: Vec<Tensor<T>>,
}

impl<T: Element> EmaState<T> {
    /// Shadow initialised from the current parameters.
    pub fn new(params: &ParamStore<T>, momentum: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(contract_err!("EMA momentum must lie in [0,1], got {momentum}"));
        }
        Ok(Self {
            momentum,
            shadow: params.ids().map(|id| params.peek(id).clone()).collect(),
            swapped: false,
        })
    }

    pub fn from_shadow(shadow: Vec<Tensor<T>>, momentum: f64) -> Self {
        Self {
            momentum,
            shadow,
            swapped: false,
        }
    }

    pub fn shadow(&self) -> &[Tensor<T>] {
        &self.shadow
    }

    pub fn update(&mut self, params: &ParamStore<T>) -> Result<()> {
        if self.swapped {
            return Err(contract_err!("EMA update while the shadow is swapped in"));
        }
        if self.shadow.len() != params.len() {
            return Err(shape_err!(
                "EMA tracks {} tensors, store has {}",
                self.shadow.len(),
                params.len()
            ));
        }
        let m = T::of(self.momentum);
        let one_m = T::of(1.0 - self.momentum);
        for (id, shadow) in params.ids().zip(self.shadow.iter_mut()) {
            let p = params.peek(id);
            if p.shape() != shadow.shape() {
                return Err(shape_err!(
                    "EMA shadow of {} has shape {:?}, parameter {:?}",
                    params.name(id),
                    shadow.shape(),
                    p.shape()
                ));
            }
            for (s, &v) in shadow.data_mut().iter_mut().zip(p.data()) {
                *s = m * *s + one_m * v;
            }
        }
        Ok(())
    }

    /// Loads the shadow into `params`; the token restores the raw values.
    pub fn swap_to_ema(&mut self, params: &mut ParamStore<T>) -> Result<EmaRestore<T>> {
        if self.swapped {
            return Err(contract_err!("EMA weights are already swapped in"));
        }
        let mut raw = Vec::with_capacity(params.len());
        for (id, shadow) in params.ids().zip(&self.shadow).collect::<Vec<_>>() {
            raw.push(params.peek(id).clone());
            params.set(id, shadow.clone())?;
        }
        self.swapped = true;
        Ok(EmaRestore { raw })
    }

    pub fn restore(&mut self, params: &mut ParamStore<T>, token: EmaRestore<T>) -> Result<()> {
        for (id, raw) in params.ids().collect::<Vec<_>>().into_iter().zip(token.raw) {
            params.set(id, raw)?;
        }
        self.swapped = false;
        Ok(())
    }

    pub fn is_swapped(&self) -> bool {
        self.swapped
    }
}
