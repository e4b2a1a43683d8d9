//! CPCANet: convolution stem, four-stage CPCA-block encoder, three-stage
//! Conv-block decoder with additive skips, de-convolution stem, and a 1x1 head.

pub mod config;
pub mod flops;
mod layers;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{ConvBlockOrder, NetworkConfig};
pub use flops::{LayerCost, LayerKind, Ledger};
pub use layers::Mode;

use crate::attention::{AttentionBlock, AttentionConfig, AttentionVariant};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::ops::ConvSpec;
use crate::params::{Bound, ParamStore};
use crate::tensor::{Element, Tensor};
use layers::{apply_stats, Conv, CpcaBlock, DecoderStage, DeconvBlock, Downsample, Fwd, StemBlock, Walk};

#[derive(Clone, Debug)]
struct Stage {
    down: Option<Downsample>,
    blocks: Vec<CpcaBlock>,
}

/// A CPCANet with its parameters.
#[derive(Clone, Debug)]
pub struct CpcaNet<T: Element> {
    pub config: NetworkConfig,
    pub variant: AttentionVariant,
    pub store: ParamStore<T>,
    stem: Vec<StemBlock>,
    stages: Vec<Stage>,
    decoder: Vec<DecoderStage>,
    deconv: Vec<DeconvBlock>,
    final_up: Conv,
    head: Conv,
}

impl<T: Element> CpcaNet<T> {
    /// Builds the network with weights initialized from `seed`.
    pub fn build(config: &NetworkConfig, variant: AttentionVariant, seed: u64) -> Result<Self> {
        config.validate()?;
        let cfg = config.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let e = cfg.embed_dim;
        let mut stem = Vec::new();
        for i in 0..cfg.stem_blocks() {
            let cin = if i == 0 { cfg.in_channels } else { e };
            stem.push(StemBlock::build(&mut store, &format!("stem.block{}", i + 1), cin, e, &mut rng)?);
        }
        let mut stages = Vec::new();
        for s in 0..4 {
            let width = cfg.stage_widths[s];
            let down = if s == 0 {
                None
            } else {
                let name = format!("encoder.down{}", s + 1);
                Some(Downsample::build(&mut store, &name, cfg.stage_widths[s - 1], width, &mut rng)?)
            };
            let mut attn = AttentionConfig::new(width, variant);
            attn.reduction = cfg.reduction;
            attn.mlp_bias = cfg.mlp_bias;
            attn.branch_kernels = cfg.branch_kernels.clone();
            let blocks = (0..cfg.stage_depths[s])
                .map(|j| {
                    let name = format!("encoder.stage{}.block{}", s + 1, j + 1);
                    CpcaBlock::build(&mut store, &name, &attn, cfg.ffn_ratio, cfg.layer_scale_init, &mut rng)
                })
                .collect::<Result<_>>()?;
            stages.push(Stage { down, blocks });
        }
        let mut decoder = Vec::new();
        for d in 0..3 {
            let (cin, cout) = (cfg.stage_widths[3 - d], cfg.stage_widths[2 - d]);
            let name = format!("decoder.stage{}", d + 1);
            decoder.push(DecoderStage::build(
                &mut store,
                &name,
                cin,
                cout,
                cfg.decoder_blocks[d],
                cfg.conv_block_order,
                &mut rng,
            )?);
        }
        let deconv = (0..cfg.deconv_stem_blocks())
            .map(|i| DeconvBlock::build(&mut store, &format!("deconv.block{}", i + 1), e, &mut rng))
            .collect::<Result<_>>()?;
        let final_up = Conv::upsample(&mut store, "deconv.up4", e, e, 4, &mut rng)?;
        let head = Conv::plain(&mut store, "head", e, cfg.num_classes, ConvSpec::new(1, 1).bias(true), &mut rng)?;
        Ok(CpcaNet { config: cfg, variant, store, stem, stages, decoder, deconv, final_up, head })
    }

    /// Number of learnable scalars.
    pub fn count_params(&self) -> usize {
        self.store.count()
    }

    /// Attention blocks of the encoder in execution order.
    pub fn attention_blocks(&self) -> impl Iterator<Item = &AttentionBlock> {
        self.stages.iter().flat_map(|s| s.blocks.iter().map(|b| &b.attention))
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let &[_, c, h, w] = shape else {
            return Err(Error::Shape { op: "cpcanet", msg: format!("input must be N,C,H,W, got {shape:?}") });
        };
        if c != self.config.in_channels {
            return Err(Error::Shape {
                op: "cpcanet",
                msg: format!("network expects {} input channels, got {c}", self.config.in_channels),
            });
        }
        self.config.check_input(h, w)
    }

    fn run(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        self.check_input(f.tape.shape(x))?;
        let mut y = x;
        for b in &self.stem {
            y = b.forward(f, y)?;
        }
        let mut features = Vec::with_capacity(4);
        for s in &self.stages {
            if let Some(d) = &s.down {
                y = d.forward(f, y)?;
            }
            for b in &s.blocks {
                y = b.forward(f, y)?;
            }
            features.push(y);
        }
        for (d, stage) in self.decoder.iter().enumerate() {
            y = stage.forward(f, y, features[2 - d])?;
        }
        for b in &self.deconv {
            y = b.forward(f, y)?;
        }
        y = self.final_up.forward(f, y)?;
        self.head.forward(f, y)
    }

    /// Records a forward pass and returns the `[N, K, H, W]` logits. In
    /// training mode batch-norm running statistics are updated.
    pub fn forward(&mut self, tape: &mut Tape<T>, p: &Bound, x: Var, mode: Mode) -> Result<Var> {
        let (y, stats) = {
            let mut f = Fwd { tape, p, store: &self.store, mode, stats: Vec::new() };
            let y = self.run(&mut f, x)?;
            (y, f.stats)
        };
        apply_stats(&mut self.store, stats);
        Ok(y)
    }

    /// Eval-mode forward that leaves the model untouched.
    pub fn forward_eval(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let mut f = Fwd { tape, p, store: &self.store, mode: Mode::Eval, stats: Vec::new() };
        self.run(&mut f, x)
    }

    /// Eval-mode logits for a batch, without gradient bookkeeping.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let y = self.forward_eval(&mut tape, &p, x)?;
        Ok(tape.value(y).clone())
    }

    /// Per-layer parameter and FLOP ledger for one `[batch, Cin, h, w]` input.
    pub fn ledger(&self, batch: usize, h: usize, w: usize) -> Result<Ledger> {
        let shape = [batch, self.config.in_channels, h, w];
        self.check_input(&shape)?;
        let mut c = Walk { ledger: Ledger::default(), store: &self.store };
        let mut s = shape.to_vec();
        for b in &self.stem {
            s = b.cost(&mut c, &s)?;
        }
        let mut features = Vec::with_capacity(4);
        for st in &self.stages {
            if let Some(d) = &st.down {
                s = d.cost(&mut c, &s)?;
            }
            for b in &st.blocks {
                s = b.cost(&mut c, &s)?;
            }
            features.push(s.clone());
        }
        for (d, stage) in self.decoder.iter().enumerate() {
            s = stage.cost(&mut c, &s, &features[2 - d])?;
        }
        for b in &self.deconv {
            s = b.cost(&mut c, &s)?;
        }
        s = self.final_up.cost(&mut c, &s)?;
        self.head.cost(&mut c, &s)?;
        Ok(c.ledger)
    }

    /// Total analytic FLOPs for one `[batch, Cin, h, w]` forward pass.
    pub fn count_flops(&self, batch: usize, h: usize, w: usize) -> Result<u64> {
        Ok(self.ledger(batch, h, w)?.total_flops())
    }
}
