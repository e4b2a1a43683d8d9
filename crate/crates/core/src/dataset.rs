//! In-memory segmentation samples and batching.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::Mask;
use crate::tensor::{Element, Tensor};

/// An image `[Cin, H, W]` with its label map.
#[derive(Clone, Debug, PartialEq)]
pub struct SegSample<T> {
    pub image: Tensor<T>,
    pub mask: Mask,
}

impl<T: Element> SegSample<T> {
    pub fn new(image: Tensor<T>, mask: Mask) -> Result<Self> {
        let &[_, h, w] = image.shape() else {
            return Err(Error::Invalid(format!("sample image must be C,H,W, got {:?}", image.shape())));
        };
        if (h, w) != (mask.height, mask.width) {
            return Err(Error::Invalid(format!("image is {h}x{w} but mask is {}x{}", mask.height, mask.width)));
        }
        image.ensure_finite("sample image")?;
        Ok(SegSample { image, mask })
    }

    pub fn channels(&self) -> usize {
        self.image.shape()[0]
    }

    /// Checks every label is below `num_classes`.
    pub fn check_labels(&self, num_classes: usize) -> Result<()> {
        match self.mask.labels.iter().find(|&&l| l as usize >= num_classes) {
            Some(l) => Err(Error::Invalid(format!("mask label {l} out of range for {num_classes} classes"))),
            None => Ok(()),
        }
    }
}

/// Stacks samples of equal size into an `[N, Cin, H, W]` batch plus flat labels.
pub fn collate<T: Element>(samples: &[&SegSample<T>]) -> Result<(Tensor<T>, Vec<u16>)> {
    let first = samples.first().ok_or_else(|| Error::Invalid("cannot batch zero samples".into()))?;
    let shape = first.image.shape().to_vec();
    let mut data = Vec::with_capacity(samples.len() * first.image.numel());
    let mut labels = Vec::with_capacity(samples.len() * first.mask.labels.len());
    for s in samples {
        if s.image.shape() != shape.as_slice() {
            return Err(Error::Invalid(format!("batch mixes image shapes {:?} and {:?}", shape, s.image.shape())));
        }
        data.extend_from_slice(s.image.data());
        labels.extend_from_slice(&s.mask.labels);
    }
    let mut full = vec![samples.len()];
    full.extend_from_slice(&shape);
    Ok((Tensor::new(full, data)?, labels))
}

/// Seeded split into `(train, held_out)` index lists; `held_out` receives
/// `round(n * fraction)` samples, clamped so training keeps at least one.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
    let mut train = idx.split_off(held);
    let mut held_out = idx;
    train.sort_unstable();
    held_out.sort_unstable();
    (train, held_out)
}
