//! Seeded synthetic segmentation datasets.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::SegSample;
use crate::error::{Error, Result};
use crate::metrics::Mask;
use crate::tensor::{cast, Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeFamily {
    /// One filled disk per foreground class, painted in class order.
    Disks,
    /// Concentric nested rings: class `k+1` lies strictly inside class `k`.
    Rings,
    /// One axis-aligned bar per foreground class.
    Strips,
}

impl fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapeFamily::Disks => "disks",
            ShapeFamily::Rings => "rings",
            ShapeFamily::Strips => "strips",
        })
    }
}

impl FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disks" => Ok(ShapeFamily::Disks),
            "rings" => Ok(ShapeFamily::Rings),
            "strips" => Ok(ShapeFamily::Strips),
            _ => Err(Error::Config(format!("unknown shape family `{s}` (expected disks, rings, or strips)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub num_samples: usize,
    pub image_size: usize,
    /// Class count including background.
    pub num_classes: usize,
    pub family: ShapeFamily,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_samples: 8,
            image_size: 64,
            num_classes: 4,
            family: ShapeFamily::Rings,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

/// Image sizes must be multiples of this (the default network's `M * 8`).
pub const SIZE_MULTIPLE: usize = 32;

/// Noiseless intensity of `class`: background 0, foreground evenly spaced in `(0, 1]`.
pub fn class_intensity(class: usize, num_classes: usize) -> f64 {
    class as f64 / (num_classes - 1) as f64
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % SIZE_MULTIPLE != 0 {
            return Err(Error::Config(format!(
                "synthetic image size {} must be a positive multiple of {SIZE_MULTIPLE}",
                self.image_size
            )));
        }
        if self.num_classes < 2 || self.num_classes > 16 {
            return Err(Error::Config(format!("synthetic num_classes must be in 2..=16, got {}", self.num_classes)));
        }
        if self.family == ShapeFamily::Rings && self.image_size < 8 * self.num_classes {
            return Err(Error::Config(format!(
                "image size {} is too small for {} nested rings (need at least {})",
                self.image_size,
                self.num_classes - 1,
                8 * self.num_classes
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

fn paint_disk(labels: &mut [u16], n: usize, cy: f64, cx: f64, r: f64, class: u16) {
    for y in 0..n {
        for x in 0..n {
            let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
            if dy * dy + dx * dx <= r * r {
                labels[y * n + x] = class;
            }
        }
    }
}

fn draw_mask<R: Rng>(spec: &SynthSpec, rng: &mut R) -> Vec<u16> {
    let n = spec.image_size;
    let nf = n as f64;
    let fg = spec.num_classes - 1;
    let mut labels = vec![0u16; n * n];
    match spec.family {
        ShapeFamily::Disks => {
            for k in 1..=fg {
                let r = rng.gen_range(0.08..0.2) * nf;
                let cy = rng.gen_range(r..nf - r);
                let cx = rng.gen_range(r..nf - r);
                paint_disk(&mut labels, n, cy, cx, r, k as u16);
            }
        }
        ShapeFamily::Rings => {
            // radii shrink by at least 2 px per class, so every inner disk is
            // strictly enclosed by its outer neighbour
            let outer = rng.gen_range(0.3..0.42) * nf;
            let step = outer / (fg as f64 + 0.5);
            let cy = nf / 2.0 + rng.gen_range(-0.06..0.06) * nf;
            let cx = nf / 2.0 + rng.gen_range(-0.06..0.06) * nf;
            for k in 1..=fg {
                let r = outer - (k - 1) as f64 * step * rng.gen_range(0.9..1.0);
                paint_disk(&mut labels, n, cy, cx, r, k as u16);
            }
        }
        ShapeFamily::Strips => {
            for k in 1..=fg {
                let thick = (rng.gen_range(0.08..0.16) * nf).max(2.0) as usize;
                let start = rng.gen_range(0..n - thick);
                let vertical = rng.gen_bool(0.5);
                for y in 0..n {
                    for x in 0..n {
                        let t = if vertical { x } else { y };
                        if (start..start + thick).contains(&t) {
                            labels[y * n + x] = k as u16;
                        }
                    }
                }
            }
        }
    }
    labels
}

/// Generates `spec.num_samples` single-channel samples.
pub fn synth_dataset<T: Element>(spec: &SynthSpec) -> Result<Vec<SegSample<T>>> {
    spec.validate()?;
    let n = spec.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(format!("noise_sigma: {e}")))?;
    let mut out = Vec::with_capacity(spec.num_samples);
    for _ in 0..spec.num_samples {
        let labels = draw_mask(spec, &mut rng);
        let data: Vec<T> = labels
            .iter()
            .map(|&l| {
                let base = class_intensity(l as usize, spec.num_classes);
                let v = if spec.noise_sigma > 0.0 { base + noise.sample(&mut rng) } else { base };
                cast(v)
            })
            .collect();
        let image = Tensor::new(vec![1, n, n], data)?;
        out.push(SegSample::new(image, Mask::new(n, n, labels)?)?);
    }
    Ok(out)
}
