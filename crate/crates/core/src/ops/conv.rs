//! Direct 2-D cross-correlation kernels and their adjoints.
//!
//! All kernels parallelize over output planes only, so every output value is
//! accumulated in a fixed order regardless of the thread count.

use rayon::prelude::*;

use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::{Element, Tensor};

/// Zero padding applied to the input of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Pad so that the output extent is `ceil(input / stride)`.
    Same,
    Explicit {
        top: usize,
        bottom: usize,
        left: usize,
        right: usize,
    },
}

impl Padding {
    pub fn uniform(p: usize) -> Self {
        Padding::Explicit { top: p, bottom: p, left: p, right: p }
    }

    fn resolve(self, h: usize, w: usize, kh: usize, kw: usize, stride: usize) -> [usize; 4] {
        match self {
            Padding::Explicit { top, bottom, left, right } => [top, bottom, left, right],
            Padding::Same => {
                let total = |len: usize, k: usize| {
                    let out = len.div_ceil(stride);
                    ((out - 1) * stride + k).saturating_sub(len)
                };
                let (th, tw) = (total(h, kh), total(w, kw));
                [th / 2, th - th / 2, tw / 2, tw - tw / 2]
            }
        }
    }
}

/// Hyper-parameters of one convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: Padding,
    pub groups: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    pub fn new(kernel_h: usize, kernel_w: usize) -> Self {
        ConvSpec { kernel_h, kernel_w, stride: 1, padding: Padding::uniform(0), groups: 1, has_bias: false }
    }

    /// Square kernel with "same" padding.
    pub fn same(k: usize) -> Self {
        ConvSpec { padding: Padding::Same, ..Self::new(k, k) }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn padding(mut self, p: Padding) -> Self {
        self.padding = p;
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn bias(mut self, b: bool) -> Self {
        self.has_bias = b;
        self
    }
}

/// Fully resolved sizes of a convolution, in forward (correlation) orientation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub groups: usize,
}

impl ConvGeometry {
    fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_per_group(), self.kernel_h, self.kernel_w]
    }

    /// Multiply-accumulates performed by a forward pass, counting every kernel tap.
    pub fn macs(&self) -> u64 {
        (self.batch * self.out_channels * self.out_h * self.out_w) as u64
            * (self.in_per_group() * self.kernel_h * self.kernel_w) as u64
    }
}

fn check_common(op: &'static str, weight: &[usize], spec: &ConvSpec) -> Result<()> {
    if spec.stride == 0 || spec.groups == 0 || spec.kernel_h == 0 || spec.kernel_w == 0 {
        return shape_err(op, "kernel size, stride, and groups must be positive");
    }
    if weight.len() != 4 {
        return shape_err(op, format!("weight must be rank 4, got shape {weight:?}"));
    }
    if weight[2] != spec.kernel_h || weight[3] != spec.kernel_w {
        return shape_err(
            op,
            format!(
                "weight kernel extent {}x{} does not match spec {}x{}",
                weight[2], weight[3], spec.kernel_h, spec.kernel_w
            ),
        );
    }
    Ok(())
}

/// Geometry of `conv2d(input, weight)` with `weight: [Cout, Cin/groups, kh, kw]`.
pub fn conv_geometry(input: &[usize], weight: &[usize], spec: &ConvSpec) -> Result<ConvGeometry> {
    const OP: &str = "conv2d";
    check_common(OP, weight, spec)?;
    let &[n, cin, h, w] = input else {
        return shape_err(OP, format!("input must be N,C,H,W, got {input:?}"));
    };
    let cout = weight[0];
    if cin % spec.groups != 0 {
        return shape_err(OP, format!("in_channels {cin} not divisible by groups {}", spec.groups));
    }
    if cout % spec.groups != 0 {
        return shape_err(OP, format!("out_channels {cout} not divisible by groups {}", spec.groups));
    }
    if weight[1] * spec.groups != cin {
        return shape_err(
            OP,
            format!(
                "weight dim 1 is {} but in_channels/groups = {}/{} = {}",
                weight[1],
                cin,
                spec.groups,
                cin / spec.groups
            ),
        );
    }
    let [pt, pb, pl, pr] = spec.padding.resolve(h, w, spec.kernel_h, spec.kernel_w, spec.stride);
    if h + pt + pb < spec.kernel_h || w + pl + pr < spec.kernel_w {
        return shape_err(
            OP,
            format!(
                "padded input {}x{} smaller than kernel {}x{}",
                h + pt + pb,
                w + pl + pr,
                spec.kernel_h,
                spec.kernel_w
            ),
        );
    }
    Ok(ConvGeometry {
        batch: n,
        in_channels: cin,
        in_h: h,
        in_w: w,
        out_channels: cout,
        out_h: (h + pt + pb - spec.kernel_h) / spec.stride + 1,
        out_w: (w + pl + pr - spec.kernel_w) / spec.stride + 1,
        kernel_h: spec.kernel_h,
        kernel_w: spec.kernel_w,
        stride: spec.stride,
        pad_top: pt,
        pad_left: pl,
        groups: spec.groups,
    })
}

/// Geometry of `transpose_conv2d(input, weight)` with `weight: [Cin, Cout/groups, kh, kw]`.
///
/// The returned geometry is that of the forward convolution whose input adjoint
/// the transpose convolution computes: its "input" is the transpose output.
pub fn transpose_geometry(input: &[usize], weight: &[usize], spec: &ConvSpec) -> Result<ConvGeometry> {
    const OP: &str = "transpose_conv2d";
    check_common(OP, weight, spec)?;
    let &[n, cin, h, w] = input else {
        return shape_err(OP, format!("input must be N,C,H,W, got {input:?}"));
    };
    if weight[0] != cin {
        return shape_err(OP, format!("weight dim 0 is {} but input has {cin} channels", weight[0]));
    }
    if cin % spec.groups != 0 {
        return shape_err(OP, format!("in_channels {cin} not divisible by groups {}", spec.groups));
    }
    let cout = weight[1] * spec.groups;
    let (pt, pb, pl, pr) = match spec.padding {
        Padding::Explicit { top, bottom, left, right } => (top, bottom, left, right),
        Padding::Same => return shape_err(OP, "\"same\" padding is not defined for transpose convolution"),
    };
    if h == 0 || w == 0 {
        return shape_err(OP, "input spatial extent must be positive");
    }
    let full_h = (h - 1) * spec.stride + spec.kernel_h;
    let full_w = (w - 1) * spec.stride + spec.kernel_w;
    if full_h <= pt + pb || full_w <= pl + pr {
        return shape_err(OP, "padding removes the entire output");
    }
    Ok(ConvGeometry {
        batch: n,
        in_channels: cout,
        in_h: full_h - pt - pb,
        in_w: full_w - pl - pr,
        out_channels: cin,
        out_h: h,
        out_w: w,
        kernel_h: spec.kernel_h,
        kernel_w: spec.kernel_w,
        stride: spec.stride,
        pad_top: pt,
        pad_left: pl,
        groups: spec.groups,
    })
}

/// Output indices `o` in `[lo, hi)` for which `o * stride + tap - pad` lands inside `[0, in_len)`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, tap: usize, pad: usize, stride: usize) -> (usize, usize) {
    let lo = if tap >= pad { 0 } else { (pad - tap).div_ceil(stride) };
    let hi = if in_len + pad > tap { ((in_len + pad - tap - 1) / stride + 1).min(out_len) } else { 0 };
    (lo, hi.max(lo))
}

/// `y[n, oc] = sum_ic sum_taps w * x (+ b)`.
pub fn conv_forward<T: Element>(x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvGeometry) -> Vec<T> {
    let (cin_g, cout_g) = (g.in_per_group(), g.out_per_group());
    let (ih, iw, oh, ow) = (g.in_h, g.in_w, g.out_h, g.out_w);
    let (kh, kw, s) = (g.kernel_h, g.kernel_w, g.stride);
    let mut y = vec![T::zero(); g.batch * g.out_channels * oh * ow];
    if oh * ow == 0 {
        return y;
    }
    y.par_chunks_mut(oh * ow).enumerate().for_each(|(plane, out)| {
        let (n, oc) = (plane / g.out_channels, plane % g.out_channels);
        let grp = oc / cout_g;
        if let Some(b) = bias {
            out.fill(b[oc]);
        }
        for icg in 0..cin_g {
            let ic = grp * cin_g + icg;
            let xin = &x[(n * g.in_channels + ic) * ih * iw..][..ih * iw];
            let wk = &w[(oc * cin_g + icg) * kh * kw..][..kh * kw];
            for ky in 0..kh {
                let (oy0, oy1) = valid_range(oh, ih, ky, g.pad_top, s);
                for kx in 0..kw {
                    let wv = wk[ky * kw + kx];
                    let (ox0, ox1) = valid_range(ow, iw, kx, g.pad_left, s);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - g.pad_top;
                        let row = &xin[iy * iw..][..iw];
                        let orow = &mut out[oy * ow..][..ow];
                        let ix0 = ox0 * s + kx - g.pad_left;
                        if s == 1 {
                            let src = &row[ix0..ix0 + (ox1 - ox0)];
                            for (o, &v) in orow[ox0..ox1].iter_mut().zip(src) {
                                *o = *o + wv * v;
                            }
                        } else {
                            for (j, o) in orow[ox0..ox1].iter_mut().enumerate() {
                                *o = *o + wv * row[ix0 + j * s];
                            }
                        }
                    }
                }
            }
        }
    });
    y
}

/// Adjoint of [`conv_forward`] with respect to its input.
pub fn conv_backward_input<T: Element>(dy: &[T], w: &[T], g: &ConvGeometry) -> Vec<T> {
    let (cin_g, cout_g) = (g.in_per_group(), g.out_per_group());
    let (ih, iw, oh, ow) = (g.in_h, g.in_w, g.out_h, g.out_w);
    let (kh, kw, s) = (g.kernel_h, g.kernel_w, g.stride);
    let mut dx = vec![T::zero(); g.batch * g.in_channels * ih * iw];
    if ih * iw == 0 {
        return dx;
    }
    dx.par_chunks_mut(ih * iw).enumerate().for_each(|(plane, dplane)| {
        let (n, ic) = (plane / g.in_channels, plane % g.in_channels);
        let (grp, icg) = (ic / cin_g, ic % cin_g);
        for ocg in 0..cout_g {
            let oc = grp * cout_g + ocg;
            let dout = &dy[(n * g.out_channels + oc) * oh * ow..][..oh * ow];
            let wk = &w[(oc * cin_g + icg) * kh * kw..][..kh * kw];
            for ky in 0..kh {
                let (oy0, oy1) = valid_range(oh, ih, ky, g.pad_top, s);
                for kx in 0..kw {
                    let wv = wk[ky * kw + kx];
                    let (ox0, ox1) = valid_range(ow, iw, kx, g.pad_left, s);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - g.pad_top;
                        let drow = &mut dplane[iy * iw..][..iw];
                        let grow = &dout[oy * ow..][ox0..ox1];
                        let ix0 = ox0 * s + kx - g.pad_left;
                        if s == 1 {
                            for (d, &gv) in drow[ix0..ix0 + grow.len()].iter_mut().zip(grow) {
                                *d = *d + wv * gv;
                            }
                        } else {
                            for (j, &gv) in grow.iter().enumerate() {
                                let d = &mut drow[ix0 + j * s];
                                *d = *d + wv * gv;
                            }
                        }
                    }
                }
            }
        }
    });
    dx
}

/// Adjoint of [`conv_forward`] with respect to its weight.
pub fn conv_backward_weight<T: Element>(x: &[T], dy: &[T], g: &ConvGeometry) -> Vec<T> {
    let (cin_g, cout_g) = (g.in_per_group(), g.out_per_group());
    let (ih, iw, oh, ow) = (g.in_h, g.in_w, g.out_h, g.out_w);
    let (kh, kw, s) = (g.kernel_h, g.kernel_w, g.stride);
    let per_oc = cin_g * kh * kw;
    let mut dw = vec![T::zero(); g.out_channels * per_oc];
    dw.par_chunks_mut(per_oc).enumerate().for_each(|(oc, dwk)| {
        let grp = oc / cout_g;
        for icg in 0..cin_g {
            let ic = grp * cin_g + icg;
            for ky in 0..kh {
                let (oy0, oy1) = valid_range(oh, ih, ky, g.pad_top, s);
                for kx in 0..kw {
                    let (ox0, ox1) = valid_range(ow, iw, kx, g.pad_left, s);
                    let mut acc = T::zero();
                    if ox0 < ox1 {
                        for n in 0..g.batch {
                            let xin = &x[(n * g.in_channels + ic) * ih * iw..][..ih * iw];
                            let dout = &dy[(n * g.out_channels + oc) * oh * ow..][..oh * ow];
                            for oy in oy0..oy1 {
                                let iy = oy * s + ky - g.pad_top;
                                let row = &xin[iy * iw..][..iw];
                                let grow = &dout[oy * ow..][ox0..ox1];
                                let ix0 = ox0 * s + kx - g.pad_left;
                                for (j, &gv) in grow.iter().enumerate() {
                                    acc = acc + gv * row[ix0 + j * s];
                                }
                            }
                        }
                    }
                    dwk[(icg * kh + ky) * kw + kx] = acc;
                }
            }
        }
    });
    dw
}

/// Per-channel sum of `dy` over batch and space.
pub fn conv_backward_bias<T: Element>(dy: &[T], batch: usize, channels: usize, hw: usize) -> Vec<T> {
    (0..channels)
        .map(|c| {
            let mut acc = T::zero();
            for n in 0..batch {
                for &v in &dy[(n * channels + c) * hw..][..hw] {
                    acc = acc + v;
                }
            }
            acc
        })
        .collect()
}

/// Non-differentiable convolution on plain tensors.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let g = conv_geometry(input.shape(), weight.shape(), spec)?;
    check_bias("conv2d", bias, g.out_channels)?;
    let y = conv_forward(input.data(), weight.data(), bias.map(|b| b.data()), &g);
    Ok(Tensor::from_parts(vec![g.batch, g.out_channels, g.out_h, g.out_w], y))
}

/// Non-differentiable transpose convolution on plain tensors.
pub fn transpose_conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let g = transpose_geometry(input.shape(), weight.shape(), spec)?;
    check_bias("transpose_conv2d", bias, g.in_channels)?;
    let mut y = conv_backward_input(input.data(), weight.data(), &g);
    if let Some(b) = bias {
        add_channel_bias(&mut y, b.data(), g.in_h * g.in_w);
    }
    Ok(Tensor::from_parts(vec![g.batch, g.in_channels, g.in_h, g.in_w], y))
}

pub(crate) fn add_channel_bias<T: Element>(y: &mut [T], bias: &[T], hw: usize) {
    let c = bias.len();
    for (plane, chunk) in y.chunks_mut(hw).enumerate() {
        let b = bias[plane % c];
        for v in chunk {
            *v = *v + b;
        }
    }
}

pub(crate) fn check_bias<T: Element>(op: &'static str, bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return shape_err(op, format!("bias must have shape [{channels}], got {:?}", b.shape()));
        }
    }
    Ok(())
}

/// Checks that `k` is a valid strip length and returns its "same" padding.
pub fn strip_padding(k: usize) -> Result<usize> {
    if k == 0 || k % 2 == 0 {
        return Err(crate::Error::Invalid(format!("strip kernel length must be a positive odd integer, got {k}")));
    }
    Ok((k - 1) / 2)
}

/// Orientation of a depth-wise strip convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StripAxis {
    /// `k x 1` kernel, filters along H.
    Vertical,
    /// `1 x k` kernel, filters along W.
    Horizontal,
}

/// Spec of a depth-wise strip convolution over `channels` channels.
pub fn strip_spec(channels: usize, k: usize, axis: StripAxis) -> Result<ConvSpec> {
    let p = strip_padding(k)?;
    Ok(match axis {
        StripAxis::Vertical => {
            ConvSpec::new(k, 1).padding(Padding::Explicit { top: p, bottom: p, left: 0, right: 0 }).groups(channels)
        }
        StripAxis::Horizontal => {
            ConvSpec::new(1, k).padding(Padding::Explicit { top: 0, bottom: 0, left: p, right: p }).groups(channels)
        }
    })
}

impl<T: Element> Tape<T> {
    /// Differentiable cross-correlation. `weight: [Cout, Cin/groups, kh, kw]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        self.value(input).ensure_finite("conv2d input")?;
        let g = conv_geometry(self.shape(input), self.shape(weight), spec)?;
        check_bias("conv2d", bias.map(|b| self.value(b)), g.out_channels)?;
        let y =
            conv_forward(self.value(input).data(), self.value(weight).data(), bias.map(|b| self.value(b).data()), &g);
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        let shape = vec![g.batch, g.out_channels, g.out_h, g.out_w];
        self.push("conv2d", Tensor::from_parts(shape, y), inputs, move |ctx, grad| {
            let mut out = vec![None, None];
            if ctx.needs(0) {
                let dx = conv_backward_input(grad.data(), ctx.input(1).data(), &g);
                out[0] = Some(Tensor::from_parts(ctx.input(0).shape().to_vec(), dx));
            }
            if ctx.needs(1) {
                let dw = conv_backward_weight(ctx.input(0).data(), grad.data(), &g);
                out[1] = Some(Tensor::from_parts(ctx.input(1).shape().to_vec(), dw));
            }
            if ctx.has_input(2) {
                out.push(ctx.needs(2).then(|| {
                    let db = conv_backward_bias(grad.data(), g.batch, g.out_channels, g.out_h * g.out_w);
                    Tensor::from_parts(vec![g.out_channels], db)
                }));
            }
            out
        })
    }

    /// Differentiable transpose convolution. `weight: [Cin, Cout/groups, kh, kw]`;
    /// output extent `(in - 1) * stride + k - pad_before - pad_after`.
    pub fn transpose_conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        self.value(input).ensure_finite("transpose_conv2d input")?;
        let g = transpose_geometry(self.shape(input), self.shape(weight), spec)?;
        let cout = g.in_channels;
        check_bias("transpose_conv2d", bias.map(|b| self.value(b)), cout)?;
        let mut y = conv_backward_input(self.value(input).data(), self.value(weight).data(), &g);
        if let Some(b) = bias {
            add_channel_bias(&mut y, self.value(b).data(), g.in_h * g.in_w);
        }
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        let shape = vec![g.batch, cout, g.in_h, g.in_w];
        self.push("transpose_conv2d", Tensor::from_parts(shape, y), inputs, move |ctx, grad| {
            let mut out = vec![None, None];
            if ctx.needs(0) {
                let dx = conv_forward(grad.data(), ctx.input(1).data(), None, &g);
                out[0] = Some(Tensor::from_parts(ctx.input(0).shape().to_vec(), dx));
            }
            if ctx.needs(1) {
                let dw = conv_backward_weight(grad.data(), ctx.input(0).data(), &g);
                out[1] = Some(Tensor::from_parts(ctx.input(1).shape().to_vec(), dw));
            }
            if ctx.has_input(2) {
                out.push(ctx.needs(2).then(|| {
                    let db = conv_backward_bias(grad.data(), g.batch, cout, g.in_h * g.in_w);
                    Tensor::from_parts(vec![cout], db)
                }));
            }
            out
        })
    }

    /// Depth-wise strip convolution with "same" zero padding. The weight is
    /// `[C, 1, 1, k]` (horizontal) or `[C, 1, k, 1]` (vertical).
    pub fn depthwise_strip_conv(&mut self, input: Var, weight: Var, k: usize) -> Result<Var> {
        let spec = strip_weight_spec(self.shape(input), self.shape(weight), k)?;
        self.conv2d(input, weight, None, &spec)
    }
}

fn strip_weight_spec(input: &[usize], weight: &[usize], k: usize) -> Result<ConvSpec> {
    const OP: &str = "depthwise_strip_conv";
    strip_padding(k)?;
    let &[_, c, _, _] = input else {
        return shape_err(OP, format!("input must be N,C,H,W, got {input:?}"));
    };
    match *weight {
        [wc, 1, 1, wk] if wc == c && wk == k => strip_spec(c, k, StripAxis::Horizontal),
        [wc, 1, wk, 1] if wc == c && wk == k => strip_spec(c, k, StripAxis::Vertical),
        _ => shape_err(OP, format!("weight must be [{c}, 1, 1, {k}] or [{c}, 1, {k}, 1], got {weight:?}")),
    }
}

/// Non-differentiable depth-wise strip convolution.
pub fn depthwise_strip_conv<T: Element>(input: &Tensor<T>, weight: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let spec = strip_weight_spec(input.shape(), weight.shape(), k)?;
    conv2d(input, weight, None, &spec)
}
