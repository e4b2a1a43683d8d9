use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Layer order inside a decoder Conv block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvBlockOrder {
    /// Conv, ReLU, BatchNorm.
    ConvReluBn,
    /// Conv, BatchNorm, ReLU.
    ConvBnRelu,
}

impl fmt::Display for ConvBlockOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConvBlockOrder::ConvReluBn => "conv_relu_bn",
            ConvBlockOrder::ConvBnRelu => "conv_bn_relu",
        })
    }
}

impl FromStr for ConvBlockOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv_relu_bn" => Ok(ConvBlockOrder::ConvReluBn),
            "conv_bn_relu" => Ok(ConvBlockOrder::ConvBnRelu),
            _ => Err(Error::Config(format!("unknown conv block order `{s}` (expected conv_relu_bn or conv_bn_relu)"))),
        }
    }
}

/// Full architecture description of a CPCANet.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    /// Channels after the convolution stem; must equal `stage_widths[0]`.
    pub embed_dim: usize,
    /// Stem downsampling factor `M`, a power of two of at least 4.
    pub downsample: usize,
    pub stage_depths: [usize; 4],
    pub stage_widths: [usize; 4],
    pub decoder_blocks: [usize; 3],
    pub branch_kernels: Vec<usize>,
    pub reduction: usize,
    pub mlp_bias: bool,
    /// Hidden expansion of the CPCA block feed-forward.
    pub ffn_ratio: usize,
    /// Initial value of the per-channel residual branch scales.
    pub layer_scale_init: f64,
    pub conv_block_order: ConvBlockOrder,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            in_channels: 1,
            num_classes: 4,
            embed_dim: 96,
            downsample: 4,
            stage_depths: [2, 2, 2, 2],
            stage_widths: [96, 192, 384, 768],
            decoder_blocks: [2, 2, 1],
            branch_kernels: vec![7, 11, 21],
            reduction: 16,
            mlp_bias: true,
            ffn_ratio: 4,
            layer_scale_init: 0.1,
            conv_block_order: ConvBlockOrder::ConvReluBn,
        }
    }
}

impl NetworkConfig {
    /// The small configuration used for desk-scale experiments.
    pub fn tiny(in_channels: usize, num_classes: usize) -> Self {
        NetworkConfig {
            in_channels,
            num_classes,
            embed_dim: 16,
            stage_depths: [1, 1, 1, 1],
            stage_widths: [16, 32, 64, 128],
            ..Default::default()
        }
    }

    /// `log2(M)`: convolution-stem block count.
    pub fn stem_blocks(&self) -> usize {
        self.downsample.trailing_zeros() as usize
    }

    /// `log2(M) - 2`: de-convolution stem block count, ahead of the stride-4 transpose conv.
    pub fn deconv_stem_blocks(&self) -> usize {
        self.stem_blocks().saturating_sub(2)
    }

    /// Spatial extents must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        self.downsample * 8
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !self.downsample.is_power_of_two() || self.downsample < 4 {
            return fail(format!("network.downsample (M) must be a power of two >= 4, got {}", self.downsample));
        }
        if self.in_channels == 0 {
            return fail("network.in_channels must be at least 1".into());
        }
        if self.num_classes < 2 {
            return fail(format!("network.num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.stage_widths[0] != self.embed_dim {
            return fail(format!(
                "network.stage_widths[0] ({}) must equal network.embed_dim ({})",
                self.stage_widths[0], self.embed_dim
            ));
        }
        if self.reduction == 0 {
            return fail("network.reduction must be positive".into());
        }
        for &w in &self.stage_widths {
            if w == 0 || w % self.reduction != 0 {
                return fail(format!(
                    "stage width {w} must be a positive multiple of network.reduction ({})",
                    self.reduction
                ));
            }
        }
        if self.ffn_ratio == 0 {
            return fail("network.ffn_ratio must be positive".into());
        }
        Ok(())
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let m = self.size_multiple();
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::Invalid(format!(
                "input {h}x{w} is not divisible by M*8 = {m}; pad the image to a multiple of {m}"
            )));
        }
        Ok(())
    }
}
