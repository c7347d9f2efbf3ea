use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{contract_err, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable tensors. Every read through [`ParamStore::get`] is counted
/// so tests can prove which parameters a computation touched.
#[derive(Debug)]
pub struct ParamStore<T: Element = f32> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    reads: Vec<AtomicUsize>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        Self {
            names: self.names.clone(),
            values: self.values.clone(),
            reads: self.values.iter().map(|_| AtomicUsize::new(0)).collect(),
        }
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            reads: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(contract_err!("duplicate parameter name {name}"));
        }
        self.names.push(name);
        self.values.push(value);
        self.reads.push(AtomicUsize::new(0));
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        self.reads[id.0].fetch_add(1, Ordering::Relaxed);
        &self.values[id.0]
    }

    /// Uninstrumented access for optimizer/EMA/serialization bookkeeping.
    pub fn peek(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(crate::error::shape_err!(
                "parameter {} has shape {:?}, got {:?}",
                self.names[id.0],
                self.values[id.0].shape(),
                value.shape()
            ));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn read_count(&self, id: ParamId) -> usize {
        self.reads[id.0].load(Ordering::Relaxed)
    }

    pub fn reset_read_counts(&self) {
        self.reads.iter().for_each(|r| r.store(0, Ordering::Relaxed));
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            reads: self.values.iter().map(|_| AtomicUsize::new(0)).collect(),
        }
    }

    /// Bitwise fingerprint of all values, for equality checks in tests and logs.
    pub fn fingerprint(&self) -> Vec<u64> {
        self.values
            .iter()
            .flat_map(|t| t.data().iter().map(|v| v.as_f64().to_bits()))
            .collect()
    }
}

/// A graph plus lazily-bound parameters. A parameter is copied into the
/// graph the first time a layer asks for it, so unused parameters are never
/// read.
pub struct Session<'p, T: Element = f32> {
    pub graph: Graph<T>,
    params: &'p ParamStore<T>,
    bound: HashMap<ParamId, Var>,
}

impl<'p, T: Element> Session<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            graph: Graph::new(),
            params,
            bound: HashMap::new(),
        }
    }

    pub fn no_grad(params: &'p ParamStore<T>) -> Self {
        Self {
            graph: Graph::no_grad(),
            params,
            bound: HashMap::new(),
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.graph.leaf(self.params.get(id).clone());
        self.bound.insert(id, v);
        v
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.graph.constant(value)
    }

    pub fn bound_params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.bound.keys().copied()
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.graph.backward(loss)
    }

    /// Gradients of all bound parameters reached by backward.
    pub fn gradients(&self) -> Gradients<T> {
        let mut grads = Gradients::empty(self.params.len());
        for (&id, &v) in &self.bound {
            if let Some(g) = self.graph.grad(v) {
                grads.slots[id.0] = Some(g.to_vec());
            }
        }
        grads
    }
}

/// Per-parameter gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Gradients<T = f32> {
    slots: Vec<Option<Vec<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn empty(len: usize) -> Self {
        Self {
            slots: vec![None; len],
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.slots.get(id.0).and_then(|s| s.as_deref())
    }

    pub fn set(&mut self, id: ParamId, grad: Vec<T>) {
        self.slots[id.0] = Some(grad);
    }

    /// Parameters outside the loss's reach receive an explicit zero gradient.
    pub fn fill_missing_with_zeros(&mut self, params: &ParamStore<T>) {
        for id in params.ids() {
            let slot = &mut self.slots[id.0];
            if slot.is_none() {
                *slot = Some(vec![T::zero(); params.peek(id).numel()]);
            }
        }
    }

    pub fn is_all_zero(&self, id: ParamId) -> bool {
        self.get(id).is_none_or(|g| g.iter().all(|v| *v == T::zero()))
    }
}
