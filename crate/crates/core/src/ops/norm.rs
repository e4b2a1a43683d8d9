//! Layer normalization over channels and batch normalization over N, H, W.

use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::{cast, Element, Tensor};

pub const NORM_EPS: f64 = 1e-5;

fn check_affine<T: Element>(op: &'static str, c: usize, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return shape_err(op, format!("scale/shift must be [{c}], got {:?} and {:?}", gamma.shape(), beta.shape()));
    }
    Ok(())
}

/// Batch statistics from a training-mode batch norm pass.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, as used for running-average updates.
    pub var: Vec<T>,
}

impl<T: Element> Tape<T> {
    /// Normalizes across the channel axis independently at each `(n, h, w)`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        const OP: &str = "layer_norm";
        let [n, c, h, w] = self.value(x).dims4(OP)?;
        if c == 0 {
            return shape_err(OP, "normalization axis (channels) is empty");
        }
        check_affine(OP, c, self.value(gamma), self.value(beta))?;
        let hw = h * w;
        let xd = self.value(x).data();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let inv_c: T = cast(1.0 / c as f64);
        let eps: T = cast(eps);
        let mut xhat = vec![T::zero(); xd.len()];
        let mut rstd = vec![T::zero(); n * hw];
        let mut y = vec![T::zero(); xd.len()];
        for b in 0..n {
            for p in 0..hw {
                let at = |ch: usize| (b * c + ch) * hw + p;
                let mean = (0..c).map(|ch| xd[at(ch)]).sum::<T>() * inv_c;
                let var = (0..c).map(|ch| (xd[at(ch)] - mean).powi(2)).sum::<T>() * inv_c;
                let r = T::one() / (var + eps).sqrt();
                rstd[b * hw + p] = r;
                for ch in 0..c {
                    let xh = (xd[at(ch)] - mean) * r;
                    xhat[at(ch)] = xh;
                    y[at(ch)] = gd[ch] * xh + bd[ch];
                }
            }
        }
        let y = Tensor::from_parts(vec![n, c, h, w], y);
        self.push(OP, y, vec![x, gamma, beta], move |ctx, grad| {
            let g = grad.data();
            let gd = ctx.input(1).data();
            let mut dx = vec![T::zero(); g.len()];
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for b in 0..n {
                for p in 0..hw {
                    let at = |ch: usize| (b * c + ch) * hw + p;
                    let mut mean_d = T::zero();
                    let mut mean_dx = T::zero();
                    for ch in 0..c {
                        let d = g[at(ch)] * gd[ch];
                        mean_d = mean_d + d;
                        mean_dx = mean_dx + d * xhat[at(ch)];
                        dgamma[ch] = dgamma[ch] + g[at(ch)] * xhat[at(ch)];
                        dbeta[ch] = dbeta[ch] + g[at(ch)];
                    }
                    mean_d = mean_d * inv_c;
                    mean_dx = mean_dx * inv_c;
                    let r = rstd[b * hw + p];
                    for ch in 0..c {
                        let d = g[at(ch)] * gd[ch];
                        dx[at(ch)] = r * (d - mean_d - xhat[at(ch)] * mean_dx);
                    }
                }
            }
            vec![
                ctx.needs(0).then(|| Tensor::from_parts(vec![n, c, h, w], dx)),
                ctx.needs(1).then(|| Tensor::from_parts(vec![c], dgamma)),
                ctx.needs(2).then(|| Tensor::from_parts(vec![c], dbeta)),
            ]
        })
    }

    /// Training-mode batch norm: normalizes each channel with the statistics of
    /// the current batch, and returns them for the caller's running averages.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats<T>)> {
        const OP: &str = "batch_norm";
        let [n, c, h, w] = self.value(x).dims4(OP)?;
        let hw = h * w;
        let m = n * hw;
        if m == 0 || c == 0 {
            return shape_err(OP, "normalization axis (N*H*W) is empty");
        }
        check_affine(OP, c, self.value(gamma), self.value(beta))?;
        let xd = self.value(x).data();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let inv_m: T = cast(1.0 / m as f64);
        let eps: T = cast(eps);
        let mut xhat = vec![T::zero(); xd.len()];
        let mut rstd = vec![T::zero(); c];
        let mut stats = BatchStats { mean: vec![T::zero(); c], var: vec![T::zero(); c] };
        let mut y = vec![T::zero(); xd.len()];
        for ch in 0..c {
            let lanes = || (0..n).flat_map(move |b| (b * c + ch) * hw..(b * c + ch + 1) * hw);
            let mean = lanes().map(|i| xd[i]).sum::<T>() * inv_m;
            let ss = lanes().map(|i| (xd[i] - mean).powi(2)).sum::<T>();
            let var = ss * inv_m;
            let r = T::one() / (var + eps).sqrt();
            rstd[ch] = r;
            stats.mean[ch] = mean;
            stats.var[ch] = if m > 1 { ss / cast((m - 1) as f64) } else { var };
            for i in lanes() {
                let xh = (xd[i] - mean) * r;
                xhat[i] = xh;
                y[i] = gd[ch] * xh + bd[ch];
            }
        }
        let y = Tensor::from_parts(vec![n, c, h, w], y);
        let var = self.push(OP, y, vec![x, gamma, beta], move |ctx, grad| {
            let g = grad.data();
            let gd = ctx.input(1).data();
            let mut dx = vec![T::zero(); g.len()];
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for ch in 0..c {
                let lanes = || (0..n).flat_map(move |b| (b * c + ch) * hw..(b * c + ch + 1) * hw);
                let mut sum_d = T::zero();
                let mut sum_dx = T::zero();
                for i in lanes() {
                    sum_d = sum_d + g[i];
                    sum_dx = sum_dx + g[i] * xhat[i];
                }
                dgamma[ch] = sum_dx;
                dbeta[ch] = sum_d;
                let k = gd[ch] * rstd[ch] * inv_m;
                let m_t: T = cast(m as f64);
                for i in lanes() {
                    dx[i] = k * (m_t * g[i] - sum_d - xhat[i] * sum_dx);
                }
            }
            vec![
                ctx.needs(0).then(|| Tensor::from_parts(vec![n, c, h, w], dx)),
                ctx.needs(1).then(|| Tensor::from_parts(vec![c], dgamma)),
                ctx.needs(2).then(|| Tensor::from_parts(vec![c], dbeta)),
            ]
        })?;
        Ok((var, stats))
    }

    /// Inference-mode batch norm with fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: f64,
    ) -> Result<Var> {
        const OP: &str = "batch_norm_eval";
        let [n, c, h, w] = self.value(x).dims4(OP)?;
        check_affine(OP, c, self.value(gamma), self.value(beta))?;
        if running_mean.len() != c || running_var.len() != c {
            return shape_err(OP, format!("running statistics must have {c} entries"));
        }
        let hw = h * w;
        let eps: T = cast(eps);
        let rstd: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mean = running_mean.to_vec();
        let xd = self.value(x).data();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let y: Vec<T> = xd
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = (i / hw) % c;
                gd[ch] * (v - mean[ch]) * rstd[ch] + bd[ch]
            })
            .collect();
        let y = Tensor::from_parts(vec![n, c, h, w], y);
        self.push(OP, y, vec![x, gamma, beta], move |ctx, grad| {
            let g = grad.data();
            let xd = ctx.input(0).data();
            let gd = ctx.input(1).data();
            let mut dx = vec![T::zero(); g.len()];
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for (i, &gv) in g.iter().enumerate() {
                let ch = (i / hw) % c;
                dx[i] = gv * gd[ch] * rstd[ch];
                dgamma[ch] = dgamma[ch] + gv * (xd[i] - mean[ch]) * rstd[ch];
                dbeta[ch] = dbeta[ch] + gv;
            }
            vec![
                ctx.needs(0).then(|| Tensor::from_parts(vec![n, c, h, w], dx)),
                ctx.needs(1).then(|| Tensor::from_parts(vec![c], dgamma)),
                ctx.needs(2).then(|| Tensor::from_parts(vec![c], dbeta)),
            ]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine(tape: &mut Tape<f64>, c: usize) -> (Var, Var) {
        (tape.constant(Tensor::ones(&[c])), tape.constant(Tensor::zeros(&[c])))
    }

    #[test]
    fn layer_norm_of_constant_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[1, 4, 2, 2], 3.7));
        let (g, b) = affine(&mut tape, 4);
        let y = tape.layer_norm(x, g, b, NORM_EPS).unwrap();
        assert!(tape.value(y).data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn batch_norm_of_standardized_input_is_identity() {
        // per channel over N*H*W: values {-1, 1} balanced -> mean 0, biased var 1
        let data: Vec<f64> = (0..2 * 2 * 2 * 2).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![2, 2, 2, 2], data.clone()).unwrap());
        let (g, b) = affine(&mut tape, 2);
        let (y, stats) = tape.batch_norm_train(x, g, b, NORM_EPS).unwrap();
        for (a, e) in tape.value(y).data().iter().zip(&data) {
            assert!((a - e).abs() < 1e-5, "{a} vs {e}");
        }
        assert_eq!(stats.mean, vec![0.0, 0.0]);
        // unbiased: 8 / 7
        assert!((stats.var[0] - 8.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn empty_axis_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 0, 2, 2]));
        let (g, b) = affine(&mut tape, 0);
        assert!(tape.layer_norm(x, g, b, NORM_EPS).is_err());
        let x = tape.constant(Tensor::zeros(&[0, 2, 2, 2]));
        let (g, b) = affine(&mut tape, 2);
        assert!(tape.batch_norm_train(x, g, b, NORM_EPS).is_err());
    }
}
