//! Segmentation metrics on integer label maps: DSC, IoU, and HD95.

use crate::error::{Error, Result};

/// A 2-D label map, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u16>,
}

impl Mask {
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Invalid(format!(
                "mask of {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Mask { height, width, labels })
    }

    pub fn filled(height: usize, width: usize, label: u16) -> Self {
        Mask { height, width, labels: vec![label; height * width] }
    }

    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    /// Indicator of `class`.
    pub fn binary(&self, class: u16) -> Vec<bool> {
        self.labels.iter().map(|&l| l == class).collect()
    }

    /// Flips left-right.
    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            out.labels[y * self.width..(y + 1) * self.width].reverse();
        }
        out
    }

    /// Flips top-bottom.
    pub fn flip_vertical(&self) -> Self {
        let mut labels = Vec::with_capacity(self.labels.len());
        for y in (0..self.height).rev() {
            labels.extend_from_slice(&self.labels[y * self.width..(y + 1) * self.width]);
        }
        Mask { labels, ..*self }
    }

    /// Rotates 90 degrees counter-clockwise.
    pub fn rot90(&self) -> Self {
        let (h, w) = (self.height, self.width);
        let mut labels = vec![0; h * w];
        for y in 0..h {
            for x in 0..w {
                labels[(w - 1 - x) * h + y] = self.labels[y * w + x];
            }
        }
        Mask { height: w, width: h, labels }
    }
}

fn check_pair(op: &str, a: &Mask, b: &Mask) -> Result<()> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::Invalid(format!(
            "{op}: masks differ in size ({}x{} vs {}x{})",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

fn counts(pred: &Mask, gt: &Mask, class: u16) -> (usize, usize, usize) {
    let mut inter = 0;
    let mut p = 0;
    let mut g = 0;
    for (&a, &b) in pred.labels.iter().zip(&gt.labels) {
        let (pa, gb) = (a == class, b == class);
        p += pa as usize;
        g += gb as usize;
        inter += (pa && gb) as usize;
    }
    (inter, p, g)
}

/// Dice similarity coefficient of `class`, in percent. Both empty scores 100.
pub fn dsc(pred: &Mask, gt: &Mask, class: u16) -> Result<f64> {
    check_pair("dsc", pred, gt)?;
    let (i, p, g) = counts(pred, gt, class);
    if p + g == 0 {
        return Ok(100.0);
    }
    Ok(100.0 * 2.0 * i as f64 / (p + g) as f64)
}

/// Intersection over union of `class`, in percent. Both empty scores 100.
pub fn iou(pred: &Mask, gt: &Mask, class: u16) -> Result<f64> {
    check_pair("iou", pred, gt)?;
    let (i, p, g) = counts(pred, gt, class);
    let union = p + g - i;
    if union == 0 {
        return Ok(100.0);
    }
    Ok(100.0 * i as f64 / union as f64)
}

/// Foreground pixels with at least one 4-neighbour outside the foreground.
/// Pixels beyond the image border count as background.
pub fn boundary(fg: &[bool], height: usize, width: usize) -> Vec<bool> {
    let at = |y: isize, x: isize| {
        y >= 0 && x >= 0 && (y as usize) < height && (x as usize) < width && fg[y as usize * width + x as usize]
    };
    let mut out = vec![false; fg.len()];
    for y in 0..height as isize {
        for x in 0..width as isize {
            if at(y, x) && !(at(y - 1, x) && at(y + 1, x) && at(y, x - 1) && at(y, x + 1)) {
                out[y as usize * width + x as usize] = true;
            }
        }
    }
    out
}

/// One-dimensional squared distance transform (lower envelope of parabolas).
/// `f` holds squared distances (or infinity), `s2` is the squared sample spacing.
fn dt_1d(f: &[f64], s2: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    z.clear();
    let sites: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if sites.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let inter = |q: usize, p: usize| {
        let (qf, pf) = (q as f64, p as f64);
        ((f[q] + s2 * qf * qf) - (f[p] + s2 * pf * pf)) / (2.0 * s2 * (qf - pf))
    };
    for &q in &sites {
        loop {
            let Some(&p) = v.last() else {
                z.push(f64::NEG_INFINITY);
                break;
            };
            let s = inter(q, p);
            if s <= *z.last().unwrap() {
                v.pop();
                z.pop();
            } else {
                z.push(s);
                break;
            }
        }
        v.push(q);
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = s2 * d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest `true`
/// pixel of `sites`, with per-axis spacing `(dy, dx)`.
pub fn squared_edt(sites: &[bool], height: usize, width: usize, spacing: [f64; 2]) -> Vec<f64> {
    let [sy, sx] = spacing;
    let mut grid: Vec<f64> = sites.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let (mut v, mut z) = (Vec::new(), Vec::new());
    let mut col = vec![0.0; height];
    let mut out = vec![0.0; height.max(width)];
    for x in 0..width {
        for y in 0..height {
            col[y] = grid[y * width + x];
        }
        dt_1d(&col, sy * sy, &mut out[..height], &mut v, &mut z);
        for y in 0..height {
            grid[y * width + x] = out[y];
        }
    }
    for y in 0..height {
        let row = grid[y * width..(y + 1) * width].to_vec();
        dt_1d(&row, sx * sx, &mut out[..width], &mut v, &mut z);
        grid[y * width..(y + 1) * width].copy_from_slice(&out[..width]);
    }
    grid
}

/// Percentile `q` in `[0, 100]` of `values` by linear interpolation between
/// order statistics at rank `q/100 * (n - 1)`.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty set");
    values.sort_by(f64::total_cmp);
    let rank = q / 100.0 * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    values[lo] + (values[hi] - values[lo]) * frac
}

/// Physical length of the image diagonal, the HD95 value when exactly one mask is empty.
pub fn diagonal(height: usize, width: usize, spacing: [f64; 2]) -> f64 {
    ((height as f64 * spacing[0]).powi(2) + (width as f64 * spacing[1]).powi(2)).sqrt()
}

/// 95th percentile of the pooled directed boundary-to-boundary nearest
/// distances between the binary masks `pred` and `gt`.
pub fn hd95_binary(pred: &[bool], gt: &[bool], height: usize, width: usize, spacing: [f64; 2]) -> Result<f64> {
    if pred.len() != height * width || gt.len() != height * width {
        return Err(Error::Invalid(format!("hd95: masks must have {} pixels", height * width)));
    }
    if !(spacing[0] > 0.0 && spacing[1] > 0.0) {
        return Err(Error::Invalid(format!("hd95: spacing must be positive, got {spacing:?}")));
    }
    let (pe, ge) = (!pred.iter().any(|&b| b), !gt.iter().any(|&b| b));
    match (pe, ge) {
        (true, true) => return Ok(0.0),
        (true, false) | (false, true) => return Ok(diagonal(height, width, spacing)),
        _ => {}
    }
    let bp = boundary(pred, height, width);
    let bg = boundary(gt, height, width);
    let dp = squared_edt(&bp, height, width, spacing);
    let dg = squared_edt(&bg, height, width, spacing);
    let mut d: Vec<f64> = Vec::new();
    d.extend(bp.iter().zip(&dg).filter(|(b, _)| **b).map(|(_, &s)| s.sqrt()));
    d.extend(bg.iter().zip(&dp).filter(|(b, _)| **b).map(|(_, &s)| s.sqrt()));
    Ok(percentile(&mut d, 95.0))
}

/// HD95 of `class` between two label maps.
pub fn hd95(pred: &Mask, gt: &Mask, class: u16, spacing: [f64; 2]) -> Result<f64> {
    check_pair("hd95", pred, gt)?;
    hd95_binary(&pred.binary(class), &gt.binary(class), pred.height, pred.width, spacing)
}

/// Per-class DSC of every class in `1..num_classes` (foreground only).
pub fn foreground_dsc(pred: &Mask, gt: &Mask, num_classes: usize) -> Result<Vec<f64>> {
    (1..num_classes).map(|k| dsc(pred, gt, k as u16)).collect()
}
