//! Named parameter storage shared between graphs, optimizers, and
//! checkpoints.
//!
//! Parameter values live behind `Arc` so binding one into a computation
//! graph is a reference-count bump, not a copy. Gradients accumulate here
//! across windows of a batch and are consumed by the optimizer.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Arc<Vec<f64>>,
    pub grad: Vec<f64>,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let (shape, data) = value.into_parts();
        let grad = vec![0.0; data.len()];
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            shape,
            value: Arc::new(data),
            grad,
            trainable,
        });
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .map(ParamId)
            .ok_or_else(|| Error::data(format!("missing parameter {name}")))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.params[id.0].shape
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub fn shared_value(&self, id: ParamId) -> Arc<Vec<f64>> {
        Arc::clone(&self.params[id.0].value)
    }

    /// Mutable access to the raw values. Clones the buffer only if a graph
    /// still holds a reference to it.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Vec<f64> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].grad
    }

    pub fn set_value(&mut self, id: ParamId, tensor: &Tensor) {
        assert_eq!(self.params[id.0].shape, tensor.shape());
        *self.value_mut(id) = tensor.data().to_vec();
    }

    pub fn tensor(&self, id: ParamId) -> Tensor {
        let p = &self.params[id.0];
        Tensor::from_vec(p.shape.clone(), p.value.to_vec()).expect("stored parameter is valid")
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Scale every accumulated gradient, e.g. to turn a sum over a batch
    /// into a mean.
    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Snapshot of all parameter values, for best-checkpoint tracking.
    pub fn snapshot(&self) -> Vec<(String, Tensor)> {
        self.iter()
            .map(|(id, p)| (p.name.clone(), self.tensor(id)))
            .collect()
    }

    pub fn restore(&mut self, snapshot: &[(String, Tensor)]) {
        for (name, tensor) in snapshot {
            let id = self.id(name).expect("snapshot matches store");
            self.set_value(id, tensor);
        }
    }
}
