//! Line-based `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored, unknown or repeated keys are
//! errors, and missing keys keep their defaults. [`RunConfig::to_text`] emits
//! every key, and parsing its output reproduces the same configuration.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::attention::{AttentionConfig, AttentionVariant};
use crate::error::{Error, Result};
use crate::inference::SlidingWindowConfig;
use crate::network::NetworkConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub variant: AttentionVariant,
    pub train: TrainConfig,
    pub infer: SlidingWindowConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            network: NetworkConfig::default(),
            variant: AttentionVariant::CpcaSequential,
            train: TrainConfig::default(),
            infer: SlidingWindowConfig::new(224, 224),
        }
    }
}

fn scalar<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

fn list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|p| scalar(key, p.trim())).collect()
}

fn array<const N: usize>(key: &str, v: &str) -> Result<[usize; N]> {
    let items = list(key, v)?;
    let n = items.len();
    items.try_into().map_err(|_| Error::Config(format!("`{key}`: expected {N} comma-separated values, got {n}")))
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub const KEYS: &[&str] = &[
    "variant",
    "network.in_channels",
    "network.num_classes",
    "network.embed_dim",
    "network.downsample",
    "network.stage_depths",
    "network.stage_widths",
    "network.decoder_blocks",
    "network.branch_kernels",
    "network.reduction",
    "network.mlp_bias",
    "network.ffn_ratio",
    "network.layer_scale_init",
    "network.conv_block_order",
    "train.epochs",
    "train.batch_size",
    "train.learning_rate",
    "train.seed",
    "train.optimizer",
    "train.momentum",
    "train.schedule",
    "train.flip_horizontal",
    "train.flip_vertical",
    "train.rotate90",
    "train.intensity_jitter",
    "train.val_fraction",
    "train.save_every",
    "train.dice_smooth",
    "train.dice_include_background",
    "loss.lambda_dc",
    "loss.lambda_ce",
    "infer.crop_h",
    "infer.crop_w",
    "infer.stride_factor",
    "infer.sigma_factor",
];

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let (n, t, i) = (&mut self.network, &mut self.train, &mut self.infer);
        match key {
            "variant" => self.variant = v.parse()?,
            "network.in_channels" => n.in_channels = scalar(key, v)?,
            "network.num_classes" => n.num_classes = scalar(key, v)?,
            "network.embed_dim" => n.embed_dim = scalar(key, v)?,
            "network.downsample" => n.downsample = scalar(key, v)?,
            "network.stage_depths" => n.stage_depths = array(key, v)?,
            "network.stage_widths" => n.stage_widths = array(key, v)?,
            "network.decoder_blocks" => n.decoder_blocks = array(key, v)?,
            "network.branch_kernels" => n.branch_kernels = list(key, v)?,
            "network.reduction" => n.reduction = scalar(key, v)?,
            "network.mlp_bias" => n.mlp_bias = flag(key, v)?,
            "network.ffn_ratio" => n.ffn_ratio = scalar(key, v)?,
            "network.layer_scale_init" => n.layer_scale_init = scalar(key, v)?,
            "network.conv_block_order" => n.conv_block_order = v.parse()?,
            "train.epochs" => t.epochs = scalar(key, v)?,
            "train.batch_size" => t.batch_size = scalar(key, v)?,
            "train.learning_rate" => t.learning_rate = scalar(key, v)?,
            "train.seed" => t.seed = scalar(key, v)?,
            "train.optimizer" => t.optimizer = v.parse()?,
            "train.momentum" => t.momentum = scalar(key, v)?,
            "train.schedule" => t.schedule = v.parse()?,
            "train.flip_horizontal" => t.augment.flip_horizontal = flag(key, v)?,
            "train.flip_vertical" => t.augment.flip_vertical = flag(key, v)?,
            "train.rotate90" => t.augment.rotate90 = flag(key, v)?,
            "train.intensity_jitter" => t.augment.intensity_jitter = scalar(key, v)?,
            "train.val_fraction" => t.val_fraction = scalar(key, v)?,
            "train.save_every" => t.save_every = scalar(key, v)?,
            "train.dice_smooth" => t.dice.smooth = scalar(key, v)?,
            "train.dice_include_background" => t.dice.include_background = flag(key, v)?,
            "loss.lambda_dc" => t.loss.lambda_dc = scalar(key, v)?,
            "loss.lambda_ce" => t.loss.lambda_ce = scalar(key, v)?,
            "infer.crop_h" => i.crop_h = scalar(key, v)?,
            "infer.crop_w" => i.crop_w = scalar(key, v)?,
            "infer.stride_factor" => i.stride_factor = scalar(key, v)?,
            "infer.sigma_factor" => i.sigma_factor = scalar(key, v)?,
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Textual value of one key, in the form [`set`](Self::set) accepts.
    pub fn get(&self, key: &str) -> Result<String> {
        let (n, t, i) = (&self.network, &self.train, &self.infer);
        Ok(match key {
            "variant" => self.variant.to_string(),
            "network.in_channels" => n.in_channels.to_string(),
            "network.num_classes" => n.num_classes.to_string(),
            "network.embed_dim" => n.embed_dim.to_string(),
            "network.downsample" => n.downsample.to_string(),
            "network.stage_depths" => join(&n.stage_depths),
            "network.stage_widths" => join(&n.stage_widths),
            "network.decoder_blocks" => join(&n.decoder_blocks),
            "network.branch_kernels" => join(&n.branch_kernels),
            "network.reduction" => n.reduction.to_string(),
            "network.mlp_bias" => n.mlp_bias.to_string(),
            "network.ffn_ratio" => n.ffn_ratio.to_string(),
            "network.layer_scale_init" => n.layer_scale_init.to_string(),
            "network.conv_block_order" => n.conv_block_order.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.learning_rate" => t.learning_rate.to_string(),
            "train.seed" => t.seed.to_string(),
            "train.optimizer" => t.optimizer.to_string(),
            "train.momentum" => t.momentum.to_string(),
            "train.schedule" => t.schedule.to_string(),
            "train.flip_horizontal" => t.augment.flip_horizontal.to_string(),
            "train.flip_vertical" => t.augment.flip_vertical.to_string(),
            "train.rotate90" => t.augment.rotate90.to_string(),
            "train.intensity_jitter" => t.augment.intensity_jitter.to_string(),
            "train.val_fraction" => t.val_fraction.to_string(),
            "train.save_every" => t.save_every.to_string(),
            "train.dice_smooth" => t.dice.smooth.to_string(),
            "train.dice_include_background" => t.dice.include_background.to_string(),
            "loss.lambda_dc" => t.loss.lambda_dc.to_string(),
            "loss.lambda_ce" => t.loss.lambda_ce.to_string(),
            "infer.crop_h" => i.crop_h.to_string(),
            "infer.crop_w" => i.crop_w.to_string(),
            "infer.stride_factor" => i.stride_factor.to_string(),
            "infer.sigma_factor" => i.sigma_factor.to_string(),
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        })
    }

    /// Parses `text` over the defaults, then validates the result.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let at = |e: Error| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", ln + 1)),
                other => other,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", ln + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value).map_err(at)?;
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: key `{key}` is set twice", ln + 1)));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        let mut attn = AttentionConfig::new(self.network.stage_widths[0], self.variant);
        attn.reduction = self.network.reduction;
        attn.branch_kernels = self.network.branch_kernels.clone();
        attn.validate()?;
        self.train.validate()?;
        self.infer.validate()
    }

    /// Every key with its resolved value, one per line, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("listed key"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_is_a_fixed_point() {
        let text = RunConfig::default().to_text();
        assert!(text.contains("loss.lambda_dc = 1.2\n"));
        assert!(text.contains("loss.lambda_ce = 0.8\n"));
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, RunConfig::default());
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn unknown_and_repeated_keys_fail() {
        let err = RunConfig::parse("trian.epochs = 3").unwrap_err();
        assert!(err.to_string().contains("trian.epochs"), "{err}");
        assert!(RunConfig::parse("train.epochs = 3\ntrain.epochs = 4").is_err());
    }

    #[test]
    fn comments_and_lists() {
        let cfg = RunConfig::parse("# tiny\nnetwork.stage_depths = 1, 1, 1, 1 # trailing\n").unwrap();
        assert_eq!(cfg.network.stage_depths, [1, 1, 1, 1]);
        assert!(RunConfig::parse("network.stage_depths = 1,1,1").is_err());
    }
}
