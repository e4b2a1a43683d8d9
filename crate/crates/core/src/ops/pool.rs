//! Global spatial pooling and per-position channel pooling.

use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::{cast, Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

/// Reduces one strided lane. Max ties go to the first index visited.
fn reduce_lane<T: Element>(values: impl Iterator<Item = T>, mode: PoolMode, len: usize) -> (T, usize) {
    match mode {
        PoolMode::Avg => {
            let s: T = values.sum();
            (s / cast(len as f64), 0)
        }
        PoolMode::Max => {
            let mut best = T::neg_infinity();
            let mut arg = 0;
            for (i, v) in values.enumerate() {
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            (best, arg)
        }
    }
}

/// `[N, C, H, W] -> [N, C, 1, 1]` plus the row-major argmax per plane.
pub fn global_pool_with_argmax<T: Element>(x: &Tensor<T>, mode: PoolMode) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = x.dims4("global_pool")?;
    if h * w == 0 {
        return shape_err("global_pool", "spatial extent must be at least 1x1");
    }
    let (vals, args): (Vec<T>, Vec<usize>) =
        x.data().chunks(h * w).map(|plane| reduce_lane(plane.iter().copied(), mode, h * w)).unzip();
    Ok((Tensor::from_parts(vec![n, c, 1, 1], vals), args))
}

pub fn global_pool<T: Element>(x: &Tensor<T>, mode: PoolMode) -> Result<Tensor<T>> {
    global_pool_with_argmax(x, mode).map(|(t, _)| t)
}

/// `[N, C, H, W] -> [N, 1, H, W]`, reducing over channels at each position.
pub fn channel_pool_with_argmax<T: Element>(x: &Tensor<T>, mode: PoolMode) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = x.dims4("channel_pool")?;
    if c == 0 {
        return shape_err("channel_pool", "channel extent must be at least 1");
    }
    let hw = h * w;
    let d = x.data();
    let mut vals = Vec::with_capacity(n * hw);
    let mut args = Vec::with_capacity(n * hw);
    for b in 0..n {
        for p in 0..hw {
            let (v, a) = reduce_lane((0..c).map(|ch| d[(b * c + ch) * hw + p]), mode, c);
            vals.push(v);
            args.push(a);
        }
    }
    Ok((Tensor::from_parts(vec![n, 1, h, w], vals), args))
}

impl<T: Element> Tape<T> {
    pub fn global_pool(&mut self, x: Var, mode: PoolMode) -> Result<Var> {
        let (y, argmax) = global_pool_with_argmax(self.value(x), mode)?;
        let op = match mode {
            PoolMode::Avg => "global_avg_pool",
            PoolMode::Max => "global_max_pool",
        };
        self.push(op, y, vec![x], move |ctx, grad| {
            let shape = ctx.input(0).shape();
            let hw = shape[2] * shape[3];
            let mut dx = vec![T::zero(); ctx.input(0).numel()];
            for (plane, (&g, &arg)) in grad.data().iter().zip(&argmax).enumerate() {
                let chunk = &mut dx[plane * hw..][..hw];
                match mode {
                    PoolMode::Avg => chunk.fill(g / cast(hw as f64)),
                    PoolMode::Max => chunk[arg] = g,
                }
            }
            vec![Some(Tensor::from_parts(shape.to_vec(), dx))]
        })
    }

    pub fn channel_pool(&mut self, x: Var, mode: PoolMode) -> Result<Var> {
        let (y, argmax) = channel_pool_with_argmax(self.value(x), mode)?;
        let op = match mode {
            PoolMode::Avg => "channel_avg_pool",
            PoolMode::Max => "channel_max_pool",
        };
        self.push(op, y, vec![x], move |ctx, grad| {
            let shape = ctx.input(0).shape();
            let (c, hw) = (shape[1], shape[2] * shape[3]);
            let mut dx = vec![T::zero(); ctx.input(0).numel()];
            for (i, (&g, &arg)) in grad.data().iter().zip(&argmax).enumerate() {
                let (b, p) = (i / hw, i % hw);
                match mode {
                    PoolMode::Avg => {
                        let share = g / cast(c as f64);
                        for ch in 0..c {
                            dx[(b * c + ch) * hw + p] = share;
                        }
                    }
                    PoolMode::Max => dx[(b * c + arg) * hw + p] = g,
                }
            }
            vec![Some(Tensor::from_parts(shape.to_vec(), dx))]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_four_values() {
        let x = Tensor::<f64>::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_pool(&x, PoolMode::Avg).unwrap().data(), &[2.5]);
        assert_eq!(global_pool(&x, PoolMode::Max).unwrap().data(), &[4.0]);
    }

    #[test]
    fn max_gradient_goes_to_first_tie() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::new(vec![1, 1, 2, 2], vec![3.0, 1.0, 3.0, 3.0]).unwrap());
        let y = tape.global_pool(x, PoolMode::Max).unwrap();
        let s = tape.sum(y).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn channel_pool_reduces_over_channels() {
        let x = Tensor::<f64>::new(vec![1, 2, 1, 2], vec![1.0, 5.0, 3.0, -1.0]).unwrap();
        let (avg, _) = channel_pool_with_argmax(&x, PoolMode::Avg).unwrap();
        let (max, arg) = channel_pool_with_argmax(&x, PoolMode::Max).unwrap();
        assert_eq!(avg.data(), &[2.0, 2.0]);
        assert_eq!(max.data(), &[3.0, 5.0]);
        assert_eq!(arg, vec![1, 0]);
    }

    #[test]
    fn rejects_empty_plane() {
        let x = Tensor::<f64>::zeros(&[1, 1, 0, 3]);
        assert!(global_pool(&x, PoolMode::Avg).is_err());
    }
}
