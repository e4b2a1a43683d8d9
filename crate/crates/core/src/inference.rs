//! Sliding-window prediction with Gaussian-weighted probability voting.

use crate::error::{Error, Result};
use crate::loss::softmax_channels;
use crate::metrics::Mask;
use crate::network::CpcaNet;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlidingWindowConfig {
    pub crop_h: usize,
    pub crop_w: usize,
    /// Window step as a fraction of the crop size.
    pub stride_factor: f64,
    /// Gaussian sigma as a fraction of the crop size.
    pub sigma_factor: f64,
}

impl SlidingWindowConfig {
    pub fn new(crop_h: usize, crop_w: usize) -> Self {
        SlidingWindowConfig { crop_h, crop_w, stride_factor: 0.5, sigma_factor: 0.125 }
    }

    pub fn strides(&self) -> (usize, usize) {
        let s = |c: usize| (self.stride_factor * c as f64).floor() as usize;
        (s(self.crop_h), s(self.crop_w))
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_h == 0 || self.crop_w == 0 {
            return Err(Error::Config("infer.crop must be positive".into()));
        }
        if !(self.stride_factor > 0.0 && self.stride_factor <= 1.0) {
            return Err(Error::Config(format!("infer.stride_factor must lie in (0, 1], got {}", self.stride_factor)));
        }
        let (sh, sw) = self.strides();
        if sh == 0 || sw == 0 {
            return Err(Error::Config(format!(
                "infer.stride_factor {} gives a zero stride for crop {}x{}",
                self.stride_factor, self.crop_h, self.crop_w
            )));
        }
        if !(self.sigma_factor > 0.0 && self.sigma_factor.is_finite()) {
            return Err(Error::Config(format!("infer.sigma_factor must be positive, got {}", self.sigma_factor)));
        }
        Ok(())
    }
}

/// Floor applied to the normalized weight map.
pub const WEIGHT_FLOOR: f64 = 1e-8;

/// Separable Gaussian over the crop, centred at `(crop - 1) / 2`, scaled to a
/// maximum of 1 and floored at [`WEIGHT_FLOOR`]. Row-major `[crop_h, crop_w]`.
pub fn gaussian_weight_map(cfg: &SlidingWindowConfig) -> Vec<f64> {
    let axis = |n: usize| -> Vec<f64> {
        let c = (n as f64 - 1.0) / 2.0;
        let sigma = n as f64 * cfg.sigma_factor;
        (0..n).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect()
    };
    let (gy, gx) = (axis(cfg.crop_h), axis(cfg.crop_w));
    let mut map: Vec<f64> = gy.iter().flat_map(|&a| gx.iter().map(move |&b| a * b)).collect();
    let max = map.iter().cloned().fold(0.0, f64::max);
    for v in &mut map {
        *v = (*v / max).max(WEIGHT_FLOOR);
    }
    map
}

/// Window start offsets along one axis: multiples of `stride`, with the final
/// window snapped so it ends at the border.
pub fn window_starts(len: usize, crop: usize, stride: usize) -> Vec<usize> {
    if len <= crop {
        return vec![0];
    }
    let last = len - crop;
    let mut starts: Vec<usize> = (0..).map(|i| i * stride).take_while(|&s| s < last).collect();
    starts.push(last);
    starts
}

/// Mirror index for reflect padding (edge pixel not repeated); period `2(n-1)`.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Reflect-pads a `[C, H, W]` image on the bottom and right to at least `(min_h, min_w)`.
pub fn reflect_pad(img: &Tensor<f64>, min_h: usize, min_w: usize) -> Tensor<f64> {
    let &[c, h, w] = img.shape() else { panic!("image must be C,H,W") };
    let (ph, pw) = (h.max(min_h), w.max(min_w));
    if (ph, pw) == (h, w) {
        return img.clone();
    }
    Tensor::from_fn(&[c, ph, pw], |i| {
        let (ch, y, x) = (i / (ph * pw), (i / pw) % ph, i % pw);
        img.data()[(ch * h + reflect(y, h)) * w + reflect(x, w)]
    })
}

/// A model mapping `[N, Cin, h, w]` inputs to `[N, K, h, w]` logits.
pub trait SegmentationModel {
    fn num_classes(&self) -> usize;
    fn logits(&self, input: &Tensor<f64>) -> Result<Tensor<f64>>;
}

impl<T: Element> SegmentationModel for CpcaNet<T> {
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn logits(&self, input: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(self.predict(&input.cast::<T>())?.cast::<f64>())
    }
}

#[derive(Clone, Debug)]
pub struct Prediction {
    /// `[K, H, W]` class probabilities.
    pub prob: Tensor<f64>,
    pub mask: Mask,
}

/// Per-pixel argmax over the class axis of `[K, H, W]` scores; ties go to the lower class.
pub fn argmax_mask<T: Element>(scores: &[T], k: usize, h: usize, w: usize) -> Mask {
    let hw = h * w;
    let labels = (0..hw)
        .map(|i| {
            let mut best = 0;
            for c in 1..k {
                if scores[c * hw + i] > scores[best * hw + i] {
                    best = c;
                }
            }
            best as u16
        })
        .collect();
    Mask { height: h, width: w, labels }
}

/// Argmax masks for every item of `[N, K, H, W]` logits.
pub fn argmax_batch<T: Element>(logits: &Tensor<T>) -> Result<Vec<Mask>> {
    let [n, k, h, w] = logits.dims4("argmax")?;
    let per = k * h * w;
    Ok((0..n).map(|b| argmax_mask(&logits.data()[b * per..(b + 1) * per], k, h, w)).collect())
}

/// Gaussian-weighted sliding-window prediction of one `[Cin, H, W]` image.
pub fn sliding_window_predict<M: SegmentationModel + ?Sized>(
    model: &M,
    image: &Tensor<f64>,
    cfg: &SlidingWindowConfig,
) -> Result<Prediction> {
    cfg.validate()?;
    let &[cin, h, w] = image.shape() else {
        return Err(Error::Invalid(format!("image must be C,H,W, got {:?}", image.shape())));
    };
    if h == 0 || w == 0 {
        return Err(Error::Invalid("image is empty".into()));
    }
    let (ch, cw) = (cfg.crop_h, cfg.crop_w);
    let padded = reflect_pad(image, ch, cw);
    let (ph, pw) = (padded.shape()[1], padded.shape()[2]);
    let (sh, sw) = cfg.strides();
    let k = model.num_classes();
    let weights = gaussian_weight_map(cfg);
    let mut acc = vec![0.0f64; k * ph * pw];
    let mut norm = vec![0.0f64; ph * pw];
    let mut window = vec![0.0f64; cin * ch * cw];
    for &y0 in &window_starts(ph, ch, sh) {
        for &x0 in &window_starts(pw, cw, sw) {
            for c in 0..cin {
                for y in 0..ch {
                    let src = (c * ph + y0 + y) * pw + x0;
                    window[(c * ch + y) * cw..(c * ch + y + 1) * cw].copy_from_slice(&padded.data()[src..src + cw]);
                }
            }
            let input = Tensor::new(vec![1, cin, ch, cw], window.clone())?;
            let logits = model.logits(&input)?;
            if logits.shape() != [1, k, ch, cw] {
                return Err(Error::Shape {
                    op: "sliding_window",
                    msg: format!("model returned {:?} for a {ch}x{cw} window with {k} classes", logits.shape()),
                });
            }
            let p = softmax_channels(logits.data(), 1, k, ch * cw);
            for y in 0..ch {
                for x in 0..cw {
                    let wt = weights[y * cw + x];
                    let dst = (y0 + y) * pw + x0 + x;
                    norm[dst] += wt;
                    for c in 0..k {
                        acc[c * ph * pw + dst] += wt * p[(c * ch + y) * cw + x];
                    }
                }
            }
        }
    }
    let mut prob = vec![0.0; k * h * w];
    for c in 0..k {
        for y in 0..h {
            for x in 0..w {
                let src = y * pw + x;
                prob[(c * h + y) * w + x] = acc[c * ph * pw + src] / norm[src];
            }
        }
    }
    let mask = argmax_mask(&prob, k, h, w);
    Ok(Prediction { prob: Tensor::new(vec![k, h, w], prob)?, mask })
}
