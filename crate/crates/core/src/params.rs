//! Named parameter storage shared by every model component.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    /// Uniform in `±1/√fan_in`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: [usize; 2],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / math::sqrt(fan_in.max(1) as f64);
        let data = (0..shape[0] * shape[1])
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.add(name, Tensor::new(shape, data).expect("non-empty parameter shape"))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: [usize; 2]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replaces values by name; every stored parameter must be supplied with
    /// its exact shape.
    pub fn load<'a>(&mut self, entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<()> {
        let mut seen = alloc::vec![false; self.len()];
        for (name, t) in entries {
            let idx = self
                .names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::config(alloc::format!("unknown parameter {name}")))?;
            if self.tensors[idx].shape() != t.shape() {
                return Err(Error::shape("load", self.tensors[idx].shape(), t.shape()));
            }
            self.tensors[idx] = t.clone();
            seen[idx] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::config(alloc::format!(
                "missing parameter {}",
                self.names[missing]
            )));
        }
        Ok(())
    }

    /// Registers every parameter as a differentiable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound(self.tensors.iter().map(|t| g.param(t)).collect())
    }
}

/// Graph handles for a [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}

/// Gradient accumulators aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(Vec<Tensor>);

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self(store.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect())
    }

    pub fn zero(&mut self) {
        for t in &mut self.0 {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Adds the leaf gradients of `g` for every bound parameter.
    pub fn accumulate(&mut self, g: &Graph, bound: &Bound) {
        for (acc, &v) in self.0.iter_mut().zip(&bound.0) {
            if let Some(grad) = g.grad(v) {
                for (a, x) in acc.data_mut().iter_mut().zip(grad.data()) {
                    *a += x;
                }
            }
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }

    pub fn as_slice(&self) -> &[Tensor] {
        &self.0
    }
}
