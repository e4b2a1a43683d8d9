//! Seeded flips, 90-degree rotations, and intensity jitter applied
//! congruently to an image and its mask.

use rand::Rng;

use crate::dataset::SegSample;
use crate::tensor::{cast, Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub rotate90: bool,
    /// Multiplicative intensity factor drawn from `[1 - jitter, 1 + jitter]`; 0 disables.
    pub intensity_jitter: f64,
}

impl AugmentConfig {
    pub const NONE: AugmentConfig =
        AugmentConfig { flip_horizontal: false, flip_vertical: false, rotate90: false, intensity_jitter: 0.0 };

    pub const STANDARD: AugmentConfig =
        AugmentConfig { flip_horizontal: true, flip_vertical: true, rotate90: true, intensity_jitter: 0.1 };

    pub fn is_identity(&self) -> bool {
        *self == Self::NONE
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self::NONE
    }
}

/// Per-channel horizontal flip of a `[C, H, W]` image.
pub fn flip_image_horizontal<T: Element>(img: &Tensor<T>) -> Tensor<T> {
    let &[c, h, w] = img.shape() else { panic!("image must be C,H,W") };
    Tensor::from_fn(&[c, h, w], |i| {
        let (plane, x) = (i / w, i % w);
        img.data()[plane * w + (w - 1 - x)]
    })
}

pub fn flip_image_vertical<T: Element>(img: &Tensor<T>) -> Tensor<T> {
    let &[c, h, w] = img.shape() else { panic!("image must be C,H,W") };
    Tensor::from_fn(&[c, h, w], |i| {
        let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
        img.data()[(ch * h + (h - 1 - y)) * w + x]
    })
}

/// 90-degree counter-clockwise rotation, matching [`Mask::rot90`](crate::metrics::Mask::rot90).
pub fn rot90_image<T: Element>(img: &Tensor<T>) -> Tensor<T> {
    let &[c, h, w] = img.shape() else { panic!("image must be C,H,W") };
    // output is [c, w, h]; out(y', x') = in(x', w - 1 - y')
    Tensor::from_fn(&[c, w, h], |i| {
        let (ch, yo, xo) = (i / (w * h), (i / h) % w, i % h);
        img.data()[(ch * h + xo) * w + (w - 1 - yo)]
    })
}

/// Applies a random subset of the enabled transforms.
pub fn augment<T: Element, R: Rng + ?Sized>(sample: &SegSample<T>, cfg: &AugmentConfig, rng: &mut R) -> SegSample<T> {
    if cfg.is_identity() {
        return sample.clone();
    }
    let mut image = sample.image.clone();
    let mut mask = sample.mask.clone();
    if cfg.flip_horizontal && rng.gen_bool(0.5) {
        image = flip_image_horizontal(&image);
        mask = mask.flip_horizontal();
    }
    if cfg.flip_vertical && rng.gen_bool(0.5) {
        image = flip_image_vertical(&image);
        mask = mask.flip_vertical();
    }
    if cfg.rotate90 {
        for _ in 0..rng.gen_range(0..4) {
            image = rot90_image(&image);
            mask = mask.rot90();
        }
    }
    if cfg.intensity_jitter > 0.0 {
        let j = cfg.intensity_jitter;
        let factor: T = cast(rng.gen_range(1.0 - j..=1.0 + j));
        image = image.map(|v| v * factor);
    }
    SegSample { image, mask }
}
