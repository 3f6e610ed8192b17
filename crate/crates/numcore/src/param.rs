use std::collections::HashMap;
use std::sync::Arc;

use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{NumError, Result};
use crate::rng::SeedStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    /// `None` until a backward pass has populated it.
    pub grad: Option<Tensor>,
}

/// Named trainable tensors of one model, in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(NumError::DuplicateParam(name));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            grad: None,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    /// Snapshot of all values converted to `S`, shareable between graphs.
    pub fn values<S: Scalar>(&self) -> Arc<ParamValues<S>> {
        Arc::new(ParamValues {
            values: self
                .params
                .iter()
                .map(|p| Arc::new(p.value.cast::<S>()))
                .collect(),
        })
    }

    /// Overwrites every gradient; parameters absent from `grads` get zeros.
    pub fn set_grads(&mut self, grads: &Gradients<f32>) {
        for (i, p) in self.params.iter_mut().enumerate() {
            let g = match grads.get(ParamId(i)) {
                Some(g) => g.clone(),
                None => Tensor::zeros(p.value.shape()),
            };
            p.grad = Some(g);
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = Some(Tensor::zeros(p.value.shape()));
        }
    }
}

/// Read-only parameter values bound into a graph.
#[derive(Debug, Clone)]
pub struct ParamValues<S: Scalar> {
    values: Vec<Arc<Tensor<S>>>,
}

impl<S: Scalar> ParamValues<S> {
    pub fn get(&self, id: ParamId) -> Result<&Arc<Tensor<S>>> {
        self.values.get(id.0).ok_or(NumError::UnknownParam(id.0))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Gradient of a scalar loss with respect to each bound parameter.
#[derive(Debug, Clone)]
pub struct Gradients<S: Scalar> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub(crate) fn new(grads: Vec<Option<Tensor<S>>>) -> Self {
        Self { grads }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<S>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Adds `other` elementwise; used to reduce per-sample gradients.
    pub fn accumulate(&mut self, other: &Gradients<S>) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            match (mine.as_mut(), theirs) {
                (Some(a), Some(b)) => a.add_assign(b),
                (None, Some(b)) => *mine = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, c: S) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_assign(c);
        }
    }

    pub fn cast<T: Scalar>(&self) -> Gradients<T> {
        Gradients {
            grads: self
                .grads
                .iter()
                .map(|g| g.as_ref().map(|t| t.cast()))
                .collect(),
        }
    }
}

/// Weight initializers drawing from a [`SeedStream`].
pub mod init {
    use super::*;

    /// Glorot/Xavier uniform for a `[fan_in, fan_out]` linear weight.
    pub fn xavier_uniform(seed: SeedStream, fan_in: usize, fan_out: usize) -> Tensor {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
        uniform(seed, &[fan_in, fan_out], bound)
    }

    pub fn uniform(seed: SeedStream, shape: &[usize], bound: f32) -> Tensor {
        let mut rng = seed.rng();
        let dist = Uniform::new_inclusive(-bound, bound);
        Tensor::from_fn(shape, |_| dist.sample(&mut rng))
    }

    pub fn normal(seed: SeedStream, shape: &[usize], std: f32) -> Tensor {
        let mut rng = seed.rng();
        let dist = Normal::new(0.0f32, std).expect("valid std");
        Tensor::from_fn(shape, |_| dist.sample(&mut rng))
    }

    /// He-normal for a conv kernel `[c_out, c_in, k]`.
    pub fn kaiming_conv(seed: SeedStream, c_out: usize, c_in: usize, k: usize) -> Tensor {
        let std = (2.0 / (c_in * k) as f64).sqrt() as f32;
        normal(seed, &[c_out, c_in, k], std)
    }

}
