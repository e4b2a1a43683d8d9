//! Building blocks of CPCANet. Every layer can run forward on a tape and
//! describe its analytic cost to a [`Ledger`].

use rand::Rng;

use crate::attention::{AttentionBlock, AttentionConfig};
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::network::config::ConvBlockOrder;
use crate::network::flops::{LayerKind, Ledger};
use crate::ops::conv::{conv_geometry, strip_spec, transpose_geometry, StripAxis};
use crate::ops::{Activation, BatchStats, ConvSpec, Padding, NORM_EPS};
use crate::params::{Bound, BufferId, ParamId, ParamStore};
use crate::tensor::{cast, Element, Tensor};

/// Whether batch norm uses batch statistics (and updates running stats) or running stats.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Forward-pass state threaded through every layer.
pub(crate) struct Fwd<'a, T: Element> {
    pub tape: &'a mut Tape<T>,
    pub p: &'a Bound,
    pub store: &'a ParamStore<T>,
    pub mode: Mode,
    /// Batch statistics gathered in training mode, applied after the pass.
    pub stats: Vec<(BufferId, BufferId, BatchStats<T>)>,
}

/// Cost-walk state.
pub(crate) struct Walk<'a, T: Element> {
    pub ledger: Ledger,
    pub store: &'a ParamStore<T>,
}

impl<T: Element> Walk<'_, T> {
    fn params(&self, ids: &[Option<ParamId>]) -> u64 {
        ids.iter().flatten().map(|&id| self.store.get(id).numel() as u64).sum()
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Conv {
    name: String,
    weight: ParamId,
    bias: Option<ParamId>,
    spec: ConvSpec,
    transpose: bool,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    fn build<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        spec: ConvSpec,
        transpose: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let (kh, kw, g) = (spec.kernel_h, spec.kernel_w, spec.groups);
        let (shape, fan_in) = if transpose {
            ([cin, cout / g, kh, kw], (cout / g) * kh * kw)
        } else {
            ([cout, cin / g, kh, kw], (cin / g) * kh * kw)
        };
        let weight = store.add_fan_in(format!("{name}.weight"), &shape, fan_in, rng)?;
        let bias = if spec.has_bias { Some(store.add(format!("{name}.bias"), Tensor::zeros(&[cout]))?) } else { None };
        Ok(Conv { name: name.to_string(), weight, bias, spec, transpose })
    }

    pub fn plain<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        spec: ConvSpec,
        rng: &mut R,
    ) -> Result<Self> {
        Self::build(store, name, cin, cout, spec, false, rng)
    }

    /// Non-overlapping `k x k`, stride `k` transpose convolution (exact `k`-fold upsampling).
    pub fn upsample<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = ConvSpec::new(k, k).stride(k).padding(Padding::uniform(0)).bias(true);
        Self::build(store, name, cin, cout, spec, true, rng)
    }

    pub fn forward<T: Element>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (f.p.var(self.weight), f.p.opt(self.bias));
        if self.transpose {
            f.tape.transpose_conv2d(x, w, b, &self.spec)
        } else {
            f.tape.conv2d(x, w, b, &self.spec)
        }
    }

    pub fn cost<T: Element>(&self, c: &mut Walk<'_, T>, input: &[usize]) -> Result<Vec<usize>> {
        let ws = c.store.get(self.weight).shape().to_vec();
        let params = c.params(&[Some(self.weight), self.bias]);
        if self.transpose {
            let g = transpose_geometry(input, &ws, &self.spec)?;
            c.ledger.transpose_conv(&self.name, &g, params);
            Ok(vec![g.batch, g.in_channels, g.in_h, g.in_w])
        } else {
            let g = conv_geometry(input, &ws, &self.spec)?;
            c.ledger.conv(&self.name, &g, params);
            Ok(vec![g.batch, g.out_channels, g.out_h, g.out_w])
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LayerNorm {
    name: String,
    gamma: ParamId,
    beta: ParamId,
}

impl LayerNorm {
    pub fn build<T: Element>(store: &mut ParamStore<T>, name: &str, c: usize) -> Result<Self> {
        let gamma = store.add(format!("{name}.weight"), Tensor::ones(&[c]))?;
        let beta = store.add(format!("{name}.bias"), Tensor::zeros(&[c]))?;
        Ok(LayerNorm { name: name.to_string(), gamma, beta })
    }

    pub fn forward<T: Element>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        f.tape.layer_norm(x, f.p.var(self.gamma), f.p.var(self.beta), NORM_EPS)
    }

    pub fn cost<T: Element>(&self, c: &mut Walk<'_, T>, input: &[usize]) {
        let params = c.params(&[Some(self.gamma), Some(self.beta)]);
        c.ledger.per_element(&self.name, LayerKind::Norm, params, input);
    }
}

pub(crate) const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug)]
pub(crate) struct BatchNorm {
    name: String,
    gamma: ParamId,
    beta: ParamId,
    running_mean: BufferId,
    running_var: BufferId,
}

impl BatchNorm {
    pub fn build<T: Element>(store: &mut ParamStore<T>, name: &str, c: usize) -> Result<Self> {
        let gamma = store.add(format!("{name}.weight"), Tensor::ones(&[c]))?;
        let beta = store.add(format!("{name}.bias"), Tensor::zeros(&[c]))?;
        let running_mean = store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[c]))?;
        let running_var = store.add_buffer(format!("{name}.running_var"), Tensor::ones(&[c]))?;
        Ok(BatchNorm { name: name.to_string(), gamma, beta, running_mean, running_var })
    }

    pub fn forward<T: Element>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        let (g, b) = (f.p.var(self.gamma), f.p.var(self.beta));
        match f.mode {
            Mode::Train => {
                let (y, stats) = f.tape.batch_norm_train(x, g, b, NORM_EPS)?;
                f.stats.push((self.running_mean, self.running_var, stats));
                Ok(y)
            }
            Mode::Eval => {
                let mean = f.store.buffer(self.running_mean).data();
                let var = f.store.buffer(self.running_var).data();
                f.tape.batch_norm_eval(x, g, b, mean, var, NORM_EPS)
            }
        }
    }

    pub fn cost<T: Element>(&self, c: &mut Walk<'_, T>, input: &[usize]) {
        let params = c.params(&[Some(self.gamma), Some(self.beta)]);
        c.ledger.per_element(&self.name, LayerKind::Norm, params, input);
    }
}

/// Folds batch statistics into running averages with momentum [`BN_MOMENTUM`].
pub(crate) fn apply_stats<T: Element>(store: &mut ParamStore<T>, stats: Vec<(BufferId, BufferId, BatchStats<T>)>) {
    let m: T = cast(BN_MOMENTUM);
    let keep = T::one() - m;
    for (mean_id, var_id, s) in stats {
        for (r, &b) in store.buffer_mut(mean_id).data_mut().iter_mut().zip(&s.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in store.buffer_mut(var_id).data_mut().iter_mut().zip(&s.var) {
            *r = keep * *r + m * b;
        }
    }
}

fn act_forward<T: Element>(f: &mut Fwd<'_, T>, x: Var, kind: Activation) -> Result<Var> {
    f.tape.activation(x, kind)
}

fn act_cost<T: Element>(c: &mut Walk<'_, T>, name: &str, input: &[usize]) {
    c.ledger.per_element(name, LayerKind::Activation, 0, input);
}

fn conv3(stride: usize) -> ConvSpec {
    ConvSpec::new(3, 3).stride(stride).padding(Padding::uniform(1)).bias(true)
}

/// Conv, GELU, LayerNorm.
#[derive(Clone, Debug)]
pub(crate) struct ConvGeluNorm {
    name: String,
    conv: Conv,
    norm: LayerNorm,
}

impl ConvGeluNorm {
    fn build<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        conv: impl FnOnce(&mut ParamStore<T>, &str, &mut R) -> Result<Conv>,
        cout: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let conv = conv(store, &format!("{name}.conv"), rng)?;
        let norm = LayerNorm::build(store, &format!("{name}.norm"), cout)?;
        Ok(ConvGeluNorm { name: name.to_string(), conv, norm })
    }

    fn forward<T: Element>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(f, x)?;
        let y = act_forward(f, y, Activation::Gelu)?;
        self.norm.forward(f, y)
    }

    fn cost<T: Element>(&self, c: &mut Walk<'_, T>, input: &[usize]) -> Result<Vec<usize>> {
        let s = self.conv.cost(c, input)?;
        act_cost(c, &format!("{}.gelu", self.name), &s);
        self.norm.cost(c, &s);
        Ok(s)
    }
}

/// One convolution-stem block: a stride-2 then a stride-1 3x3 conv.
#[derive(Clone, Debug)]
pub(crate) struct StemBlock {
    first: ConvGeluNorm,
    second: ConvGeluNorm,
}

impl StemBlock {
    pub fn build<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let first = ConvGeluNorm::build(
            store,
            &format!("{name}.0"),
            |s, n, r| Conv::plain(s, n, cin, cout, conv3(2), r),
            cout,
            rng,
        )?;
        let second = ConvGeluNorm::build(
            store,
            &format!("{name}.1"),
            |s, n, r| Conv::plain(s, n, cout, cout, conv3(1), r),
            cout,
            rng,
        )?;
        Ok(StemBlock { first, second })
    }

    pub fn forward<T: Element>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        let y = self.first.forward(f, x)?;
        self.second.forward(f, y)
    }

    pub fn cost<T: Element>(&self, c: &mut Walk<'_, T>, input: &[usize]) -> Result<Vec<usize>> {
        let s = self.first.cost(c, input)?;
        self.second.cost(c, &s)
    }
}

/// One de-convolution-stem block: a 2x transpose conv then a stride-1 3x3 conv.
#[derive(Clone, Debug)]
pub(crate) struct DeconvBlock {
    first: ConvGeluNorm,
    second: ConvGeluNorm,
}

impl DeconvBlock {
    pub fn build<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let first =
            ConvGeluNorm::build(store, &format!("{name}.0"), |s, n, r| Conv::upsample(s, n, c, c, 2, r), c, rng)?;
        let second =
            ConvGeluNorm::build(store, &format!("{name}.1"), |s, n, r| Conv::plain(s, n, c, c, conv3(1), r), c, rng)?;
        Ok(DeconvBlock { first, second })
    }

    pub fn forward<T: Element>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        let y = self.first.forward(f, x)?;
        self.second.forward(f, y)
    }

    pub fn cost<T: Element>(&self, c: &mut Walk<'_, T>, input: &[usize]) -> Result<Vec<usize>> {
        let s = self.first.cost(c, input)?;
        self.second.cost(c, &s)
    }
}

/// Stride-2 3x3 conv followed by LayerNorm.
#[derive(Clone, Debug)]
pub(crate) struct Downsample {
    conv: Conv,
    norm: LayerNorm,
}

impl Downsample {
    pub fn build<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let conv = Conv::plain(store, &format!("{name}.conv"), cin, cout, conv3(2), rng)?;
        let norm = LayerNorm::build(store, &format!("{name}.norm"), cout)?;
        Ok(Downsample { conv, norm })
    }

    pub fn forward<T: Element>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(f, x)?;
        self.norm.forward(f, y)
    }

    pub fn cost<T: Element>(&self, c: &mut Walk<'_, T>, input: &[usize]) -> Result<Vec<usize>> {
        let s = self.conv.cost(c, input)?;
        self.norm.cost(c, &s);
        Ok(s)
    }
}

/// Pre-norm residual block: `x + ls1 * Attn(LN(x))`, then `x + ls2 * FFN(LN(x))`.
#[derive(Clone, Debug)]
pub(crate) struct CpcaBlock {
    name: String,
    norm1: LayerNorm,
    pub attention: AttentionBlock,
    scale1: ParamId,
    norm2: LayerNorm,
    fc1: Conv,
    fc2: Conv,
    scale2: ParamId,
}

impl CpcaBlock {
    pub fn build<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        attn: &AttentionConfig,
        ffn_ratio: usize,
        layer_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let c = attn.channels;
        let norm1 = LayerNorm::build(store, &format!("{name}.norm1"), c)?;
        let attention = AttentionBlock::build(store, &format!("{name}.attn"), attn, rng)?;
        let scale1 = store.add(format!("{name}.scale1"), Tensor::full(&[1, c, 1, 1], cast(layer_scale)))?;
        let norm2 = LayerNorm::build(store, &format!("{name}.norm2"), c)?;
        let pw = ConvSpec::new(1, 1).bias(true);
        let fc1 = Conv::plain(store, &format!("{name}.ffn.fc1"), c, c * ffn_ratio, pw, rng)?;
        let fc2 = Conv::plain(store, &format!("{name}.ffn.fc2"), c * ffn_ratio, c, pw, rng)?;
        let scale2 = store.add(format!("{name}.scale2"), Tensor::full(&[1, c, 1, 1], cast(layer_scale)))?;
        Ok(CpcaBlock { name: name.to_string(), norm1, attention, scale1, norm2, fc1, fc2, scale2 })
    }

    pub fn forward<T: Element>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        let h = self.norm1.forward(f, x)?;
        let a = self.attention.forward(f.tape, f.p, h)?.output;
        let a = f.tape.mul(a, f.p.var(self.scale1))?;
        let x = f.tape.add(x, a)?;
        let h = self.norm2.forward(f, x)?;
        let h = self.fc1.forward(f, h)?;
        let h = act_forward(f, h, Activation::Gelu)?;
        let h = self.fc2.forward(f, h)?;
        let h = f.tape.mul(h, f.p.var(self.scale2))?;
        f.tape.add(x, h)
    }

    pub fn cost<T: Element>(&self, c: &mut Walk<'_, T>, input: &[usize]) -> Result<Vec<usize>> {
        let n = &self.name;
        self.norm1.cost(c, input);
        attention_cost(c, &format!("{n}.attn"), &self.attention, input)?;
        let p1 = c.params(&[Some(self.scale1)]);
        c.ledger.per_element(&format!("{n}.scale1"), LayerKind::Elementwise, p1, input);
        c.ledger.per_element(&format!("{n}.residual1"), LayerKind::Elementwise, 0, input);
        self.norm2.cost(c, input);
        let h = self.fc1.cost(c, input)?;
        act_cost(c, &format!("{n}.ffn.gelu"), &h);
        self.fc2.cost(c, &h)?;
        let p2 = c.params(&[Some(self.scale2)]);
        c.ledger.per_element(&format!("{n}.scale2"), LayerKind::Elementwise, p2, input);
        c.ledger.per_element(&format!("{n}.residual2"), LayerKind::Elementwise, 0, input);
        Ok(input.to_vec())
    }
}

/// Analytic cost of one attention block on an `[N, C, H, W]` input.
pub(crate) fn attention_cost<T: Element>(
    c: &mut Walk<'_, T>,
    name: &str,
    block: &AttentionBlock,
    input: &[usize],
) -> Result<()> {
    use crate::attention::AttentionVariant as V;
    let &[n, ch, h, w] = input else {
        return crate::error::shape_err("attention", format!("input must be N,C,H,W, got {input:?}"));
    };
    let plane = [n, 1, h, w];
    let vector = [n, ch, 1, 1];
    if let Some(ca) = &block.channel {
        let paths: usize = if block.variant == V::Se { 1 } else { 2 };
        let hidden = c.store.get(ca.fc1_weight).shape()[0];
        let params = c.params(&[Some(ca.fc1_weight), ca.fc1_bias, Some(ca.fc2_weight), ca.fc2_bias]);
        for _ in 0..paths {
            c.ledger.per_element(&format!("{name}.ca.pool"), LayerKind::Pool, 0, input);
        }
        let mlp_flops = (paths * n * 2 * (2 * hidden * ch)) as u64;
        c.ledger.push(format!("{name}.ca.mlp"), LayerKind::Linear, params, mlp_flops, &vector);
        c.ledger.push(format!("{name}.ca.relu"), LayerKind::Activation, 0, (paths * n * hidden) as u64, &[n, hidden]);
        if paths == 2 {
            c.ledger.per_element(&format!("{name}.ca.sum"), LayerKind::Elementwise, 0, &vector);
        }
        c.ledger.per_element(&format!("{name}.ca.sigmoid"), LayerKind::Activation, 0, &vector);
    }
    if let Some(sa) = &block.spatial {
        let k0 = sa.base_kernel;
        let base_spec = ConvSpec::same(k0).groups(ch).bias(true);
        let g = conv_geometry(input, &[ch, 1, k0, k0], &base_spec)?;
        c.ledger.conv(&format!("{name}.sa.dw"), &g, c.params(&[Some(sa.base_weight), Some(sa.base_bias)]));
        for (i, br) in sa.branches.iter().enumerate() {
            let b = format!("{name}.sa.branch{}", i + 1);
            let k = br.kernel;
            let gv = conv_geometry(input, &[ch, 1, k, 1], &strip_spec(ch, k, StripAxis::Vertical)?)?;
            c.ledger.conv(&format!("{b}.vertical"), &gv, c.params(&[Some(br.vertical_weight), Some(br.vertical_bias)]));
            let gh = conv_geometry(input, &[ch, 1, 1, k], &strip_spec(ch, k, StripAxis::Horizontal)?)?;
            c.ledger.conv(
                &format!("{b}.horizontal"),
                &gh,
                c.params(&[Some(br.horizontal_weight), Some(br.horizontal_bias)]),
            );
            c.ledger.per_element(&format!("{b}.sum"), LayerKind::Elementwise, 0, input);
        }
        if let Some((mw, mb)) = sa.mix {
            let g = conv_geometry(input, &[ch, ch, 1, 1], &ConvSpec::new(1, 1).bias(true))?;
            c.ledger.conv(&format!("{name}.sa.mix"), &g, c.params(&[Some(mw), Some(mb)]));
        }
    }
    if let Some((wid, k)) = block.cbam_spatial {
        c.ledger.per_element(&format!("{name}.cbam.pool_avg"), LayerKind::Pool, 0, input);
        c.ledger.per_element(&format!("{name}.cbam.pool_max"), LayerKind::Pool, 0, input);
        let g = conv_geometry(&[n, 2, h, w], &[1, 2, k, k], &ConvSpec::same(k))?;
        c.ledger.conv(&format!("{name}.cbam.conv"), &g, c.params(&[Some(wid)]));
        c.ledger.per_element(&format!("{name}.cbam.sigmoid"), LayerKind::Activation, 0, &plane);
    }
    // one full-size product per applied gate
    let gates = usize::from(block.channel.is_some())
        + usize::from(block.spatial.is_some())
        + usize::from(block.cbam_spatial.is_some());
    for i in 0..gates {
        c.ledger.per_element(&format!("{name}.gate{}", i + 1), LayerKind::Elementwise, 0, input);
    }
    Ok(())
}

/// 3x3 conv with ReLU and BatchNorm in the configured order.
#[derive(Clone, Debug)]
pub(crate) struct ConvBlock {
    name: String,
    conv: Conv,
    bn: BatchNorm,
    order: ConvBlockOrder,
}

impl ConvBlock {
    pub fn build<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c: usize,
        order: ConvBlockOrder,
        rng: &mut R,
    ) -> Result<Self> {
        let conv = Conv::plain(store, &format!("{name}.conv"), c, c, conv3(1), rng)?;
        let bn = BatchNorm::build(store, &format!("{name}.bn"), c)?;
        Ok(ConvBlock { name: name.to_string(), conv, bn, order })
    }

    pub fn forward<T: Element>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(f, x)?;
        match self.order {
            ConvBlockOrder::ConvReluBn => {
                let y = act_forward(f, y, Activation::Relu)?;
                self.bn.forward(f, y)
            }
            ConvBlockOrder::ConvBnRelu => {
                let y = self.bn.forward(f, y)?;
                act_forward(f, y, Activation::Relu)
            }
        }
    }

    pub fn cost<T: Element>(&self, c: &mut Walk<'_, T>, input: &[usize]) -> Result<Vec<usize>> {
        let s = self.conv.cost(c, input)?;
        let relu = format!("{}.relu", self.name);
        match self.order {
            ConvBlockOrder::ConvReluBn => {
                act_cost(c, &relu, &s);
                self.bn.cost(c, &s);
            }
            ConvBlockOrder::ConvBnRelu => {
                self.bn.cost(c, &s);
                act_cost(c, &relu, &s);
            }
        }
        Ok(s)
    }
}

/// 2x transpose-conv upsampling, additive 1x1 skip fusion, then Conv blocks.
#[derive(Clone, Debug)]
pub(crate) struct DecoderStage {
    name: String,
    up: Conv,
    skip: Conv,
    blocks: Vec<ConvBlock>,
}

impl DecoderStage {
    #[allow(clippy::too_many_arguments)]
    pub fn build<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        depth: usize,
        order: ConvBlockOrder,
        rng: &mut R,
    ) -> Result<Self> {
        let up = Conv::upsample(store, &format!("{name}.up"), cin, cout, 2, rng)?;
        let skip = Conv::plain(store, &format!("{name}.skip"), cout, cout, ConvSpec::new(1, 1).bias(true), rng)?;
        let blocks = (0..depth)
            .map(|j| ConvBlock::build(store, &format!("{name}.block{}", j + 1), cout, order, rng))
            .collect::<Result<_>>()?;
        Ok(DecoderStage { name: name.to_string(), up, skip, blocks })
    }

    pub fn forward<T: Element>(&self, f: &mut Fwd<'_, T>, x: Var, skip: Var) -> Result<Var> {
        let u = self.up.forward(f, x)?;
        let s = self.skip.forward(f, skip)?;
        let mut y = f.tape.add(u, s)?;
        for b in &self.blocks {
            y = b.forward(f, y)?;
        }
        Ok(y)
    }

    pub fn cost<T: Element>(&self, c: &mut Walk<'_, T>, input: &[usize], skip: &[usize]) -> Result<Vec<usize>> {
        let s = self.up.cost(c, input)?;
        self.skip.cost(c, skip)?;
        c.ledger.per_element(&format!("{}.fuse", self.name), LayerKind::Elementwise, 0, &s);
        let mut s = s;
        for b in &self.blocks {
            s = b.cost(c, &s)?;
        }
        Ok(s)
    }
}
