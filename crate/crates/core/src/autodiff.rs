//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every differentiable operation appends one node holding its output value,
//! the handles of its inputs, and a backward closure. Because inputs must
//! already exist when a node is pushed, the tape is topologically ordered by
//! construction, and a single reverse sweep visits each node exactly once.

use crate::error::{shape_err, Result};
use crate::tensor::{Element, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Computes input gradients of one recorded operation: one entry per input,
/// `None` where the input needs no gradient.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>, &Tensor<T>) -> Vec<Option<Tensor<T>>> + Send + Sync>;

pub(crate) struct BackwardCtx<'a, T: Element> {
    tape: &'a Tape<T>,
    inputs: &'a [Var],
    output: &'a Tensor<T>,
}

impl<T: Element> BackwardCtx<'_, T> {
    pub fn input(&self, i: usize) -> &Tensor<T> {
        self.tape.value(self.inputs[i])
    }

    pub fn output(&self) -> &Tensor<T> {
        self.output
    }

    pub fn needs(&self, i: usize) -> bool {
        self.tape.requires_grad(self.inputs[i])
    }

    pub fn has_input(&self, i: usize) -> bool {
        i < self.inputs.len()
    }
}

struct Node<T: Element> {
    op: &'static str,
    value: Tensor<T>,
    inputs: Vec<Var>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

/// Ordered record of executed operations. Confined to one thread of control.
pub struct Tape<T: Element> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Records a leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { op: "leaf", value, inputs: Vec::new(), requires_grad, backward: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op
    }

    /// Appends a computed node. Rejects non-finite outputs.
    pub(crate) fn push<F>(&mut self, op: &'static str, value: Tensor<T>, inputs: Vec<Var>, backward: F) -> Result<Var>
    where
        F: Fn(&BackwardCtx<'_, T>, &Tensor<T>) -> Vec<Option<Tensor<T>>> + Send + Sync + 'static,
    {
        if !value.all_finite() {
            return Err(crate::Error::NonFinite { op: format!("{op} (tape node {})", self.nodes.len()) });
        }
        let requires_grad = inputs.iter().any(|&v| self.requires_grad(v));
        let backward: Option<BackwardFn<T>> = if requires_grad { Some(Box::new(backward)) } else { None };
        self.nodes.push(Node { op, value, inputs, requires_grad, backward });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return shape_err("backward", format!("root must be a scalar, got shape {:?}", root.value.shape()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(root.value.shape()));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            let Some(bw) = node.backward.as_ref() else { continue };
            let Some(grad) = grads[id].take() else { continue };
            let ctx = BackwardCtx { tape: self, inputs: &node.inputs, output: &node.value };
            let input_grads = bw(&ctx, &grad);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "op {}", node.op);
            for (&input, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.shape(), self.shape(input), "grad shape from op {}", node.op);
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
            grads[id] = Some(grad);
        }
        Ok(Gradients { grads })
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T: Element> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the loss w.r.t. `v`, or `None` if `v` does not influence it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Like [`get`](Self::get), substituting zeros for untouched variables.
    pub fn get_or_zeros(&self, tape: &Tape<T>, v: Var) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(v)))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
