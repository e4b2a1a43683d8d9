//! Broadcasting binary ops, scaling, reductions, and shape plumbing.

use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Mul,
    Add,
}

/// Shape of `a op b` where each axis either matches or has extent 1 on one side.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return shape_err("broadcast", format!("rank mismatch: {a:?} vs {b:?}"));
    }
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(axis, (&x, &y))| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => {
                shape_err("broadcast", format!("axis {axis}: extent {x} cannot broadcast against {y} ({a:?} vs {b:?})"))
            }
        })
        .collect()
}

/// Row-major strides of `shape` within `out`, zero along stretched axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i] = if shape[i] == 1 && out[i] != 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visits every output index together with the matching flat offsets into `a` and `b`.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let numel: usize = out.iter().product();
    if numel == 0 {
        return;
    }
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..numel {
        f(o, ia, ib);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            ia += sa[ax];
            ib += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            ia -= sa[ax] * out[ax];
            ib -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

/// Sums `grad` (of shape `out`) down to `shape` over stretched axes.
pub fn reduce_to<T: Element>(grad: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if grad.shape() == shape {
        return grad.clone();
    }
    let strides = broadcast_strides(shape, grad.shape());
    let zeros = vec![0; shape.len()];
    let mut acc = vec![T::zero(); shape.iter().product()];
    let g = grad.data();
    for_each_broadcast(grad.shape(), &strides, &zeros, |o, i, _| acc[i] = acc[i] + g[o]);
    Tensor::from_parts(shape.to_vec(), acc)
}

/// Non-differentiable broadcasting binary op.
pub fn elementwise<T: Element>(a: &Tensor<T>, b: &Tensor<T>, kind: BinaryKind) -> Result<Tensor<T>> {
    let out = broadcast_shape(a.shape(), b.shape())?;
    let f = |x: T, y: T| match kind {
        BinaryKind::Mul => x * y,
        BinaryKind::Add => x + y,
    };
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_parts(out, data));
    }
    let sa = broadcast_strides(a.shape(), &out);
    let sb = broadcast_strides(b.shape(), &out);
    let mut data = vec![T::zero(); out.iter().product()];
    let (ad, bd) = (a.data(), b.data());
    for_each_broadcast(&out, &sa, &sb, |o, i, j| data[o] = f(ad[i], bd[j]));
    Ok(Tensor::from_parts(out, data))
}

impl<T: Element> Tape<T> {
    pub fn elementwise(&mut self, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
        let y = elementwise(self.value(a), self.value(b), kind)?;
        let name = match kind {
            BinaryKind::Mul => "mul",
            BinaryKind::Add => "add",
        };
        self.push(name, y, vec![a, b], move |ctx, grad| {
            let (ta, tb) = (ctx.input(0), ctx.input(1));
            match kind {
                BinaryKind::Add => vec![
                    ctx.needs(0).then(|| reduce_to(grad, ta.shape())),
                    ctx.needs(1).then(|| reduce_to(grad, tb.shape())),
                ],
                BinaryKind::Mul => vec![
                    ctx.needs(0).then(|| reduce_to(&elementwise(grad, tb, BinaryKind::Mul).unwrap(), ta.shape())),
                    ctx.needs(1).then(|| reduce_to(&elementwise(grad, ta, BinaryKind::Mul).unwrap(), tb.shape())),
                ],
            }
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryKind::Mul)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryKind::Add)
    }

    /// `factor * x`.
    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let y = self.value(x).map(|v| factor * v);
        self.push("scale", y, vec![x], move |_, grad| vec![Some(grad.map(|g| factor * g))])
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let y = Tensor::scalar(self.value(x).sum());
        self.push("sum", y, vec![x], |ctx, grad| vec![Some(Tensor::full(ctx.input(0).shape(), grad.data()[0]))])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).reshape(shape)?;
        self.push("reshape", y, vec![x], |ctx, grad| vec![Some(grad.reshape(ctx.input(0).shape()).unwrap())])
    }

    /// Concatenates rank-4 tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        const OP: &str = "concat_channels";
        if parts.is_empty() {
            return shape_err(OP, "nothing to concatenate");
        }
        let [n, _, h, w] = self.value(parts[0]).dims4(OP)?;
        let mut channels = Vec::with_capacity(parts.len());
        for &p in parts {
            let [pn, pc, ph, pw] = self.value(p).dims4(OP)?;
            if (pn, ph, pw) != (n, h, w) {
                return shape_err(OP, format!("part shape {:?} does not match N,H,W = {n},{h},{w}", self.shape(p)));
            }
            channels.push(pc);
        }
        let total: usize = channels.iter().sum();
        let hw = h * w;
        let mut data = Vec::with_capacity(n * total * hw);
        for b in 0..n {
            for (&p, &c) in parts.iter().zip(&channels) {
                data.extend_from_slice(&self.value(p).data()[b * c * hw..][..c * hw]);
            }
        }
        let y = Tensor::from_parts(vec![n, total, h, w], data);
        self.push(OP, y, parts.to_vec(), move |_, grad| {
            let g = grad.data();
            let mut offset = 0;
            channels
                .iter()
                .map(|&c| {
                    let mut part = Vec::with_capacity(n * c * hw);
                    for b in 0..n {
                        part.extend_from_slice(&g[(b * total + offset) * hw..][..c * hw]);
                    }
                    offset += c;
                    Some(Tensor::from_parts(vec![n, c, h, w], part))
                })
                .collect()
        })
    }
}
