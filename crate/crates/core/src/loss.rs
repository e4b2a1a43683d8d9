//! Soft Dice, pixel-wise cross-entropy, and their weighted combination.

use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{cast, Element, Tensor};

/// Weights of the combined segmentation loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_dc: f64,
    pub lambda_ce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_dc: 1.2, lambda_ce: 0.8 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_dc >= 0.0 && self.lambda_ce >= 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be non-negative, got lambda_dc={} lambda_ce={}",
                self.lambda_dc, self.lambda_ce
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiceOptions {
    pub smooth: f64,
    pub include_background: bool,
}

impl Default for DiceOptions {
    fn default() -> Self {
        DiceOptions { smooth: 1e-5, include_background: true }
    }
}

/// Validates `labels` against `[N, K, H, W]` logits; returns `(N, K, H*W)`.
fn check_labels(op: &'static str, shape: &[usize], labels: &[u16]) -> Result<(usize, usize, usize)> {
    let &[n, k, h, w] = shape else {
        return shape_err(op, format!("logits must be N,K,H,W, got {shape:?}"));
    };
    if n == 0 || h * w == 0 {
        return Err(Error::Invalid(format!("{op}: empty batch")));
    }
    if k < 2 {
        return shape_err(op, format!("need at least 2 classes, got {k}"));
    }
    if labels.len() != n * h * w {
        return shape_err(op, format!("expected {} labels, got {}", n * h * w, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= k) {
        return Err(Error::Invalid(format!("{op}: label {bad} out of range for {k} classes")));
    }
    Ok((n, k, h * w))
}

/// Per-pixel softmax over the class axis of `[N, K, H, W]` data.
pub fn softmax_channels<T: Element>(data: &[T], n: usize, k: usize, hw: usize) -> Vec<T> {
    let mut p = vec![T::zero(); data.len()];
    for b in 0..n {
        for i in 0..hw {
            let at = |c: usize| (b * k + c) * hw + i;
            let m = (0..k).map(|c| data[at(c)]).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for c in 0..k {
                let e = (data[at(c)] - m).exp();
                p[at(c)] = e;
                z = z + e;
            }
            for c in 0..k {
                p[at(c)] = p[at(c)] / z;
            }
        }
    }
    p
}

/// Backpropagates `dp` (gradient w.r.t. probabilities) through the softmax.
fn softmax_backward<T: Element>(p: &[T], dp: &[T], n: usize, k: usize, hw: usize) -> Vec<T> {
    let mut dz = vec![T::zero(); p.len()];
    for b in 0..n {
        for i in 0..hw {
            let at = |c: usize| (b * k + c) * hw + i;
            let dot = (0..k).map(|c| p[at(c)] * dp[at(c)]).sum::<T>();
            for c in 0..k {
                dz[at(c)] = p[at(c)] * (dp[at(c)] - dot);
            }
        }
    }
    dz
}

impl<T: Element> Tape<T> {
    /// Mean negative log-softmax at the target label, over all pixels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u16]) -> Result<Var> {
        const OP: &str = "cross_entropy";
        let (n, k, hw) = check_labels(OP, self.shape(logits), labels)?;
        let z = self.value(logits).data();
        let mut total = T::zero();
        for b in 0..n {
            for i in 0..hw {
                let at = |c: usize| (b * k + c) * hw + i;
                let m = (0..k).map(|c| z[at(c)]).fold(T::neg_infinity(), T::max);
                let lse = (0..k).map(|c| (z[at(c)] - m).exp()).sum::<T>().ln() + m;
                total = total + lse - z[at(labels[b * hw + i] as usize)];
            }
        }
        let count: T = cast((n * hw) as f64);
        let y = Tensor::scalar(total / count);
        let labels = labels.to_vec();
        self.push(OP, y, vec![logits], move |ctx, grad| {
            let mut p = softmax_channels(ctx.input(0).data(), n, k, hw);
            let s = grad.data()[0] / count;
            for b in 0..n {
                for i in 0..hw {
                    let t = labels[b * hw + i] as usize;
                    for c in 0..k {
                        let at = (b * k + c) * hw + i;
                        let onehot = if c == t { T::one() } else { T::zero() };
                        p[at] = (p[at] - onehot) * s;
                    }
                }
            }
            vec![Some(Tensor::from_parts(ctx.input(0).shape().to_vec(), p))]
        })
    }

    /// `1 - mean_k (2 sum p t + s) / (sum p + sum t + s)` with sums over the whole batch.
    pub fn dice_loss(&mut self, logits: Var, labels: &[u16], opts: DiceOptions) -> Result<Var> {
        const OP: &str = "dice_loss";
        let (n, k, hw) = check_labels(OP, self.shape(logits), labels)?;
        let first = usize::from(!opts.include_background);
        let classes = k - first;
        let p = softmax_channels(self.value(logits).data(), n, k, hw);
        let smooth: T = cast(opts.smooth);
        let two: T = cast(2.0);
        let mut inter = vec![T::zero(); k];
        let mut denom = vec![T::zero(); k];
        for b in 0..n {
            for c in 0..k {
                for i in 0..hw {
                    let pv = p[(b * k + c) * hw + i];
                    let t = labels[b * hw + i] as usize == c;
                    denom[c] = denom[c] + pv;
                    if t {
                        inter[c] = inter[c] + pv;
                        denom[c] = denom[c] + T::one();
                    }
                }
            }
        }
        let score: T = (first..k).map(|c| (two * inter[c] + smooth) / (denom[c] + smooth)).sum();
        let classes_t: T = cast(classes as f64);
        let y = Tensor::scalar(T::one() - score / classes_t);
        let labels = labels.to_vec();
        self.push(OP, y, vec![logits], move |ctx, grad| {
            let g = grad.data()[0];
            let mut dp = vec![T::zero(); p.len()];
            for c in first..k {
                let den = denom[c] + smooth;
                let num = two * inter[c] + smooth;
                for b in 0..n {
                    for i in 0..hw {
                        let t = if labels[b * hw + i] as usize == c { T::one() } else { T::zero() };
                        dp[(b * k + c) * hw + i] = -g * (two * t * den - num) / (den * den * classes_t);
                    }
                }
            }
            let dz = softmax_backward(&p, &dp, n, k, hw);
            vec![Some(Tensor::from_parts(ctx.input(0).shape().to_vec(), dz))]
        })
    }

    /// `lambda_dc * dice + lambda_ce * ce`.
    pub fn combined_loss(
        &mut self,
        logits: Var,
        labels: &[u16],
        weights: LossWeights,
        dice: DiceOptions,
    ) -> Result<Var> {
        weights.validate()?;
        let dc = self.dice_loss(logits, labels, dice)?;
        let ce = self.cross_entropy(logits, labels)?;
        let dc = self.scale(dc, cast(weights.lambda_dc))?;
        let ce = self.scale(ce, cast(weights.lambda_ce))?;
        self.add(dc, ce)
    }
}
