//! Named parameter and buffer storage shared by every layer of a model.

use std::collections::HashSet;

use rand::Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(usize);

/// Ordered, uniquely named learnable tensors plus non-learnable buffers
/// (running statistics). Names are hierarchical, separated by dots.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<(String, Tensor<T>)>,
    buffers: Vec<(String, Tensor<T>)>,
    names: HashSet<String>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), buffers: Vec::new(), names: HashSet::new() }
    }

    fn claim(&mut self, name: &str) -> Result<()> {
        if !self.names.insert(name.to_string()) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        Ok(())
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        self.claim(&name)?;
        self.params.push((name, value));
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<BufferId> {
        let name = name.into();
        self.claim(&name)?;
        self.buffers.push((name, value));
        Ok(BufferId(self.buffers.len() - 1))
    }

    /// Weight drawn uniformly from `±1/sqrt(fan_in)`.
    pub fn add_fan_in<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        self.add(name, Tensor::uniform(shape, bound, rng))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].1
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<T> {
        &self.buffers[id.0].1
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Tensor<T> {
        &mut self.buffers[id.0].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].0
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.buffers.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|(n, _)| n == name).map(ParamId)
    }

    pub fn find_buffer(&self, name: &str) -> Option<BufferId> {
        self.buffers.iter().position(|(n, _)| n == name).map(BufferId)
    }

    /// Total number of learnable scalars.
    pub fn count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Records every parameter on `tape`, as gradient-receiving leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        Bound { vars: self.params.iter().map(|(_, t)| tape.leaf(t.clone(), trainable)).collect() }
    }

    /// Gradients of every parameter, zeros where a parameter did not reach the loss.
    pub fn gradients(&self, tape: &Tape<T>, bound: &Bound, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        bound.vars.iter().map(|&v| grads.get_or_zeros(tape, v)).collect()
    }
}

/// Tape handles for the parameters of one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Handles bound by the caller, one per parameter in [`ParamStore::ids`] order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn opt(&self, id: Option<ParamId>) -> Option<Var> {
        id.map(|id| self.var(id))
    }
}
