//! Channel prior convolutional attention and the SE / CBAM baselines.
//!
//! CPCA computes a per-channel gate from pooled descriptors, applies it to the
//! input (the channel prior), then derives a full `C x H x W` spatial map from
//! the prior with a depth-wise base convolution, three multi-scale strip
//! branches plus an identity branch, and a 1x1 channel-mixing convolution.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::ops::conv::{strip_spec, StripAxis};
use crate::ops::{ConvSpec, PoolMode};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{cast, Element, Tensor};

/// Which attention composition a block computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttentionVariant {
    CpcaSequential,
    CpcaParallel,
    ChannelOnly,
    SpatialOnly,
    Cbam,
    Se,
    CpcaNoMix,
}

impl AttentionVariant {
    pub const ALL: [AttentionVariant; 7] = [
        AttentionVariant::CpcaSequential,
        AttentionVariant::CpcaParallel,
        AttentionVariant::ChannelOnly,
        AttentionVariant::SpatialOnly,
        AttentionVariant::Cbam,
        AttentionVariant::Se,
        AttentionVariant::CpcaNoMix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttentionVariant::CpcaSequential => "cpca_sequential",
            AttentionVariant::CpcaParallel => "cpca_parallel",
            AttentionVariant::ChannelOnly => "channel_only",
            AttentionVariant::SpatialOnly => "spatial_only",
            AttentionVariant::Cbam => "cbam",
            AttentionVariant::Se => "se",
            AttentionVariant::CpcaNoMix => "cpca_no_mix",
        }
    }

    fn uses_channel(self) -> bool {
        !matches!(self, AttentionVariant::SpatialOnly)
    }

    fn uses_cpca_spatial(self) -> bool {
        matches!(
            self,
            AttentionVariant::CpcaSequential
                | AttentionVariant::CpcaParallel
                | AttentionVariant::SpatialOnly
                | AttentionVariant::CpcaNoMix
        )
    }
}

impl fmt::Display for AttentionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttentionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|v| v.name()).collect();
            Error::Config(format!("unknown attention variant `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

/// Hyper-parameters of one attention block.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionConfig {
    pub channels: usize,
    pub reduction: usize,
    pub mlp_bias: bool,
    /// Side of the depth-wise base kernel ahead of the branches.
    pub base_kernel: usize,
    pub branch_kernels: Vec<usize>,
    /// Side of the CBAM spatial kernel.
    pub cbam_kernel: usize,
    pub variant: AttentionVariant,
}

impl AttentionConfig {
    pub fn new(channels: usize, variant: AttentionVariant) -> Self {
        AttentionConfig {
            channels,
            reduction: 16,
            mlp_bias: true,
            base_kernel: 5,
            branch_kernels: vec![7, 11, 21],
            cbam_kernel: 7,
            variant,
        }
    }

    pub fn hidden(&self) -> usize {
        self.channels / self.reduction
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        if self.reduction == 0 || c % self.reduction != 0 || c / self.reduction == 0 {
            return Err(Error::Config(format!(
                "reduction ratio {} must divide channel count {c} with a hidden size of at least 1",
                self.reduction
            )));
        }
        if self.variant.uses_cpca_spatial() {
            if self.branch_kernels.len() != 3 {
                return Err(Error::Config(format!(
                    "spatial attention needs exactly 3 strip branches, got {:?}",
                    self.branch_kernels
                )));
            }
            for (i, &k) in self.branch_kernels.iter().enumerate() {
                if k % 2 == 0 || k == 0 {
                    return Err(Error::Config(format!("branch kernel {k} must be odd")));
                }
                if self.branch_kernels[..i].contains(&k) {
                    return Err(Error::Config(format!("branch kernel {k} is repeated")));
                }
            }
            if self.base_kernel % 2 == 0 {
                return Err(Error::Config(format!("base kernel {} must be odd", self.base_kernel)));
            }
        }
        if self.variant == AttentionVariant::Cbam && self.cbam_kernel % 2 == 0 {
            return Err(Error::Config(format!("CBAM kernel {} must be odd", self.cbam_kernel)));
        }
        Ok(())
    }
}

/// Shared two-layer MLP applied to pooled channel descriptors.
#[derive(Clone, Debug)]
pub struct ChannelAttentionParams {
    pub fc1_weight: ParamId,
    pub fc1_bias: Option<ParamId>,
    pub fc2_weight: ParamId,
    pub fc2_bias: Option<ParamId>,
}

#[derive(Clone, Debug)]
pub struct StripBranch {
    pub kernel: usize,
    pub vertical_weight: ParamId,
    pub vertical_bias: ParamId,
    pub horizontal_weight: ParamId,
    pub horizontal_bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct SpatialAttentionParams {
    pub base_kernel: usize,
    pub base_weight: ParamId,
    pub base_bias: ParamId,
    pub branches: Vec<StripBranch>,
    /// 1x1 channel mixing; absent for the no-mix variant.
    pub mix: Option<(ParamId, ParamId)>,
}

#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub variant: AttentionVariant,
    pub channels: usize,
    pub channel: Option<ChannelAttentionParams>,
    pub spatial: Option<SpatialAttentionParams>,
    /// CBAM spatial conv weight `[1, 2, k, k]`.
    pub cbam_spatial: Option<(ParamId, usize)>,
}

/// Output of an attention block with its intermediate maps.
#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    pub output: Var,
    /// `[N, C, 1, 1]`, after the sigmoid.
    pub channel_map: Option<Var>,
    /// CPCA: `[N, C, H, W]` after mixing. CBAM: `[N, 1, H, W]` after the sigmoid.
    pub spatial_map: Option<Var>,
}

fn zeros_bias<T: Element>(store: &mut ParamStore<T>, name: String, c: usize) -> Result<ParamId> {
    store.add(name, Tensor::zeros(&[c]))
}

impl AttentionBlock {
    /// Registers the block's parameters under `prefix` and returns the block.
    pub fn build<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: &AttentionConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let hidden = cfg.hidden();
        let channel = if cfg.variant.uses_channel() {
            let fc1_weight = store.add_fan_in(format!("{prefix}.ca.fc1.weight"), &[hidden, c], c, rng)?;
            let fc1_bias =
                if cfg.mlp_bias { Some(zeros_bias(store, format!("{prefix}.ca.fc1.bias"), hidden)?) } else { None };
            let fc2_weight = store.add_fan_in(format!("{prefix}.ca.fc2.weight"), &[c, hidden], hidden, rng)?;
            let fc2_bias =
                if cfg.mlp_bias { Some(zeros_bias(store, format!("{prefix}.ca.fc2.bias"), c)?) } else { None };
            Some(ChannelAttentionParams { fc1_weight, fc1_bias, fc2_weight, fc2_bias })
        } else {
            None
        };
        let spatial = if cfg.variant.uses_cpca_spatial() {
            let k0 = cfg.base_kernel;
            let base_weight = store.add_fan_in(format!("{prefix}.sa.dw.weight"), &[c, 1, k0, k0], k0 * k0, rng)?;
            let base_bias = zeros_bias(store, format!("{prefix}.sa.dw.bias"), c)?;
            let mut branches = Vec::with_capacity(cfg.branch_kernels.len());
            for (i, &k) in cfg.branch_kernels.iter().enumerate() {
                let b = format!("{prefix}.sa.branch{}", i + 1);
                let vertical_weight = store.add_fan_in(format!("{b}.vertical.weight"), &[c, 1, k, 1], k, rng)?;
                let vertical_bias = zeros_bias(store, format!("{b}.vertical.bias"), c)?;
                let horizontal_weight = store.add_fan_in(format!("{b}.horizontal.weight"), &[c, 1, 1, k], k, rng)?;
                let horizontal_bias = zeros_bias(store, format!("{b}.horizontal.bias"), c)?;
                branches.push(StripBranch {
                    kernel: k,
                    vertical_weight,
                    vertical_bias,
                    horizontal_weight,
                    horizontal_bias,
                });
            }
            let mix = if cfg.variant == AttentionVariant::CpcaNoMix {
                None
            } else {
                let w = store.add_fan_in(format!("{prefix}.sa.mix.weight"), &[c, c, 1, 1], c, rng)?;
                let b = zeros_bias(store, format!("{prefix}.sa.mix.bias"), c)?;
                Some((w, b))
            };
            Some(SpatialAttentionParams { base_kernel: k0, base_weight, base_bias, branches, mix })
        } else {
            None
        };
        let cbam_spatial = if cfg.variant == AttentionVariant::Cbam {
            let k = cfg.cbam_kernel;
            Some((store.add_fan_in(format!("{prefix}.cbam.conv.weight"), &[1, 2, k, k], 2 * k * k, rng)?, k))
        } else {
            None
        };
        Ok(AttentionBlock { variant: cfg.variant, channels: c, channel, spatial, cbam_spatial })
    }

    fn need<'a, P>(&self, part: &'a Option<P>, what: &str) -> Result<&'a P> {
        part.as_ref().ok_or_else(|| Error::Config(format!("variant {} requires {what} parameters", self.variant)))
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<AttentionOutput> {
        let [_, c, _, _] = tape.value(x).dims4("attention")?;
        if c != self.channels {
            return Err(Error::Shape {
                op: "attention",
                msg: format!("block built for {} channels, input has {c}", self.channels),
            });
        }
        let none = |output| AttentionOutput { output, channel_map: None, spatial_map: None };
        match self.variant {
            AttentionVariant::CpcaSequential | AttentionVariant::CpcaNoMix => {
                let ca = self.need(&self.channel, "channel attention")?;
                let sa = self.need(&self.spatial, "spatial attention")?;
                let mc = channel_attention(tape, p, ca, x)?;
                let fc = tape.mul(mc, x)?;
                let ms = spatial_attention(tape, p, sa, fc)?;
                let output = tape.mul(ms, fc)?;
                Ok(AttentionOutput { output, channel_map: Some(mc), spatial_map: Some(ms) })
            }
            AttentionVariant::CpcaParallel => {
                let ca = self.need(&self.channel, "channel attention")?;
                let sa = self.need(&self.spatial, "spatial attention")?;
                let mc = channel_attention(tape, p, ca, x)?;
                let ms = spatial_attention(tape, p, sa, x)?;
                let gated = tape.mul(ms, x)?;
                let output = tape.mul(mc, gated)?;
                Ok(AttentionOutput { output, channel_map: Some(mc), spatial_map: Some(ms) })
            }
            AttentionVariant::ChannelOnly => {
                let ca = self.need(&self.channel, "channel attention")?;
                let mc = channel_attention(tape, p, ca, x)?;
                let output = tape.mul(mc, x)?;
                Ok(AttentionOutput { channel_map: Some(mc), ..none(output) })
            }
            AttentionVariant::SpatialOnly => {
                let sa = self.need(&self.spatial, "spatial attention")?;
                let ms = spatial_attention(tape, p, sa, x)?;
                let output = tape.mul(ms, x)?;
                Ok(AttentionOutput { spatial_map: Some(ms), ..none(output) })
            }
            AttentionVariant::Cbam => {
                let ca = self.need(&self.channel, "channel attention")?;
                let &(w, k) = self.need(&self.cbam_spatial, "CBAM spatial")?;
                let mc = channel_attention(tape, p, ca, x)?;
                let fc = tape.mul(mc, x)?;
                let ms = cbam_spatial_map(tape, p.var(w), k, fc)?;
                let output = tape.mul(ms, fc)?;
                Ok(AttentionOutput { output, channel_map: Some(mc), spatial_map: Some(ms) })
            }
            AttentionVariant::Se => {
                let ca = self.need(&self.channel, "channel attention")?;
                let mc = se_channel_map(tape, p, ca, x)?;
                let output = tape.mul(mc, x)?;
                Ok(AttentionOutput { channel_map: Some(mc), ..none(output) })
            }
        }
    }
}

fn mlp<T: Element>(tape: &mut Tape<T>, p: &Bound, ca: &ChannelAttentionParams, d: Var) -> Result<Var> {
    let h = tape.linear(d, p.var(ca.fc1_weight), p.opt(ca.fc1_bias))?;
    let h = tape.relu(h)?;
    tape.linear(h, p.var(ca.fc2_weight), p.opt(ca.fc2_bias))
}

fn pooled<T: Element>(tape: &mut Tape<T>, x: Var, mode: PoolMode) -> Result<Var> {
    let [n, c, _, _] = tape.value(x).dims4("channel_attention")?;
    let g = tape.global_pool(x, mode)?;
    tape.reshape(g, &[n, c])
}

/// `sigmoid(MLP(avgpool(x)) + MLP(maxpool(x)))` as `[N, C, 1, 1]`.
pub fn channel_attention<T: Element>(
    tape: &mut Tape<T>,
    p: &Bound,
    ca: &ChannelAttentionParams,
    x: Var,
) -> Result<Var> {
    let [n, c, _, _] = tape.value(x).dims4("channel_attention")?;
    let avg = pooled(tape, x, PoolMode::Avg)?;
    let max = pooled(tape, x, PoolMode::Max)?;
    let a = mlp(tape, p, ca, avg)?;
    let m = mlp(tape, p, ca, max)?;
    let s = tape.add(a, m)?;
    let s = tape.sigmoid(s)?;
    tape.reshape(s, &[n, c, 1, 1])
}

/// Squeeze-and-excitation gate: `sigmoid(MLP(avgpool(x)))` as `[N, C, 1, 1]`.
pub fn se_channel_map<T: Element>(tape: &mut Tape<T>, p: &Bound, ca: &ChannelAttentionParams, x: Var) -> Result<Var> {
    let [n, c, _, _] = tape.value(x).dims4("se_attention")?;
    let avg = pooled(tape, x, PoolMode::Avg)?;
    let a = mlp(tape, p, ca, avg)?;
    let s = tape.sigmoid(a)?;
    tape.reshape(s, &[n, c, 1, 1])
}

/// `Mix(sum_i Branch_i(DwConv(x)))` with `Branch_0` the identity.
pub fn spatial_attention<T: Element>(
    tape: &mut Tape<T>,
    p: &Bound,
    sa: &SpatialAttentionParams,
    x: Var,
) -> Result<Var> {
    let [_, c, _, _] = tape.value(x).dims4("spatial_attention")?;
    let base_spec = ConvSpec::same(sa.base_kernel).groups(c).bias(true);
    let base = tape.conv2d(x, p.var(sa.base_weight), Some(p.var(sa.base_bias)), &base_spec)?;
    let mut acc = base;
    for br in &sa.branches {
        let v_spec = strip_spec(c, br.kernel, StripAxis::Vertical)?.bias(true);
        let h_spec = strip_spec(c, br.kernel, StripAxis::Horizontal)?.bias(true);
        let v = tape.conv2d(base, p.var(br.vertical_weight), Some(p.var(br.vertical_bias)), &v_spec)?;
        let h = tape.conv2d(v, p.var(br.horizontal_weight), Some(p.var(br.horizontal_bias)), &h_spec)?;
        acc = tape.add(acc, h)?;
    }
    match sa.mix {
        Some((w, b)) => tape.conv2d(acc, p.var(w), Some(p.var(b)), &ConvSpec::new(1, 1).bias(true)),
        None => Ok(acc),
    }
}

/// CBAM spatial gate: one `[N, 1, H, W]` map shared by every channel.
pub fn cbam_spatial_map<T: Element>(tape: &mut Tape<T>, weight: Var, k: usize, x: Var) -> Result<Var> {
    let avg = tape.channel_pool(x, PoolMode::Avg)?;
    let max = tape.channel_pool(x, PoolMode::Max)?;
    let both = tape.concat_channels(&[avg, max])?;
    let s = tape.conv2d(both, weight, None, &ConvSpec::same(k))?;
    tape.sigmoid(s)
}

/// Sets every parameter of `block` so that both gates are exactly one.
/// Channel gate: `sigmoid(40)` rounds to 1 in both precisions.
pub fn force_unit_gates<T: Element>(store: &mut ParamStore<T>, block: &AttentionBlock) {
    if let Some(ca) = &block.channel {
        for id in [Some(ca.fc1_weight), ca.fc1_bias, Some(ca.fc2_weight)].into_iter().flatten() {
            store.get_mut(id).data_mut().fill(T::zero());
        }
        if let Some(b) = ca.fc2_bias {
            store.get_mut(b).data_mut().fill(cast(40.0));
        }
    }
    if let Some(sa) = &block.spatial {
        if let Some((w, b)) = sa.mix {
            store.get_mut(w).data_mut().fill(T::zero());
            store.get_mut(b).data_mut().fill(T::one());
        }
    }
}
