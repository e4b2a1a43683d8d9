//! Optimizers, learning-rate schedules, the training loop, and evaluation.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{augment, AugmentConfig};
use crate::autodiff::Tape;
use crate::dataset::{collate, split_indices, SegSample};
use crate::error::{Error, Result};
use crate::inference::argmax_batch;
use crate::loss::{DiceOptions, LossWeights};
use crate::metrics::{self, Mask};
use crate::network::{CpcaNet, Mode};
use crate::params::ParamStore;
use crate::tensor::{cast, Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    SgdMomentum,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::SgdMomentum => "sgd_momentum",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd_momentum" => Ok(OptimizerKind::SgdMomentum),
            _ => Err(Error::Config(format!("unknown optimizer `{s}` (expected adam or sgd_momentum)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    Constant,
    /// `lr * (1 - epoch / epochs)^0.9`.
    Poly,
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Constant => "constant",
            Schedule::Poly => "poly",
        })
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "poly" => Ok(Schedule::Poly),
            _ => Err(Error::Config(format!("unknown schedule `{s}` (expected constant or poly)"))),
        }
    }
}

impl Schedule {
    /// Learning rate for 0-based `epoch` out of `epochs`.
    pub fn lr(self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Poly => base * (1.0 - epoch as f64 / epochs.max(1) as f64).powf(0.9),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Momentum of [`OptimizerKind::SgdMomentum`].
    pub momentum: f64,
    pub schedule: Schedule,
    pub augment: AugmentConfig,
    /// Held-out fraction; with no held-out samples the training split is evaluated.
    pub val_fraction: f64,
    /// Write a checkpoint every this many epochs; 0 only writes the final one.
    pub save_every: usize,
    pub loss: LossWeights,
    pub dice: DiceOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 2,
            learning_rate: 1e-3,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            momentum: 0.99,
            schedule: Schedule::Constant,
            augment: AugmentConfig::NONE,
            val_fraction: 0.2,
            save_every: 0,
            loss: LossWeights::default(),
            dice: DiceOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("train.learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("train.val_fraction must lie in [0, 1), got {}", self.val_fraction)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("train.momentum must lie in [0, 1), got {}", self.momentum)));
        }
        let j = self.augment.intensity_jitter;
        if !(0.0..1.0).contains(&j) {
            return Err(Error::Config(format!("train.intensity_jitter must lie in [0, 1), got {j}")));
        }
        self.loss.validate()
    }
}

/// Adam (beta 0.9 / 0.999, eps 1e-8) or heavy-ball SGD, one state slot per parameter.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    momentum: f64,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Element> Optimizer<T> {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(kind: OptimizerKind, momentum: f64, store: &ParamStore<T>) -> Self {
        let zeros = || store.params().map(|(_, t)| vec![T::zero(); t.numel()]).collect::<Vec<_>>();
        let second = if kind == OptimizerKind::Adam { zeros() } else { Vec::new() };
        Optimizer { kind, momentum, step: 0, first: zeros(), second }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) {
        self.step += 1;
        let lr_t: T = cast(lr);
        let ids: Vec<_> = store.ids().collect();
        match self.kind {
            OptimizerKind::Adam => {
                let (b1, b2): (T, T) = (cast(Self::BETA1), cast(Self::BETA2));
                let c1: T = cast(1.0 - Self::BETA1.powi(self.step as i32));
                let c2: T = cast(1.0 - Self::BETA2.powi(self.step as i32));
                let eps: T = cast(Self::EPS);
                for (i, id) in ids.into_iter().enumerate() {
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    let p = store.get_mut(id).data_mut();
                    for (j, &g) in grads[i].data().iter().enumerate() {
                        m[j] = b1 * m[j] + (T::one() - b1) * g;
                        v[j] = b2 * v[j] + (T::one() - b2) * g * g;
                        let mh = m[j] / c1;
                        let vh = v[j] / c2;
                        p[j] = p[j] - lr_t * mh / (vh.sqrt() + eps);
                    }
                }
            }
            OptimizerKind::SgdMomentum => {
                let mu: T = cast(self.momentum);
                for (i, id) in ids.into_iter().enumerate() {
                    let buf = &mut self.first[i];
                    let p = store.get_mut(id).data_mut();
                    for (j, &g) in grads[i].data().iter().enumerate() {
                        buf[j] = mu * buf[j] + g;
                        p[j] = p[j] - lr_t * buf[j];
                    }
                }
            }
        }
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    /// Mean of `dsc`.
    pub dsc_mean: f64,
    /// Foreground classes `1..K`, percent.
    pub dsc: Vec<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn header(num_classes: usize) -> String {
        let mut s = String::from("epoch,loss,dsc_mean");
        for k in 1..num_classes {
            let _ = write!(s, ",dsc_class_{k}");
        }
        s.push_str(",lr");
        s
    }

    pub fn csv_row(r: &EpochRecord) -> String {
        let mut s = format!("{},{:.6},{:.4}", r.epoch, r.loss, r.dsc_mean);
        for d in &r.dsc {
            let _ = write!(s, ",{d:.4}");
        }
        let _ = write!(s, ",{:e}", r.lr);
        s
    }

    pub fn to_csv(&self, num_classes: usize) -> String {
        let mut s = Self::header(num_classes);
        s.push('\n');
        for r in &self.records {
            s.push_str(&Self::csv_row(r));
            s.push('\n');
        }
        s
    }
}

/// Per-class metric means over a set of samples; index 0 is class 1.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub dsc: Vec<f64>,
    pub iou: Vec<f64>,
    pub hd95: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl EvalReport {
    pub fn dsc_mean(&self) -> f64 {
        mean(&self.dsc)
    }

    pub fn iou_mean(&self) -> f64 {
        mean(&self.iou)
    }

    pub fn hd95_mean(&self) -> f64 {
        mean(&self.hd95)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<8}{:>10}{:>10}{:>10}\n", "class", "DSC", "IoU", "HD95");
        for k in 0..self.dsc.len() {
            let _ = writeln!(s, "{:<8}{:>10.2}{:>10.2}{:>10.3}", k + 1, self.dsc[k], self.iou[k], self.hd95[k]);
        }
        let _ =
            writeln!(s, "{:<8}{:>10.2}{:>10.2}{:>10.3}", "mean", self.dsc_mean(), self.iou_mean(), self.hd95_mean());
        s
    }
}

/// Foreground metrics averaged over samples.
pub fn evaluate_masks(preds: &[Mask], gts: &[Mask], num_classes: usize, spacing: [f64; 2]) -> Result<EvalReport> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::Invalid(format!(
            "need equally many predictions and ground truths, got {} and {}",
            preds.len(),
            gts.len()
        )));
    }
    let n = preds.len() as f64;
    let fg = num_classes.saturating_sub(1);
    let mut r = EvalReport { dsc: vec![0.0; fg], iou: vec![0.0; fg], hd95: vec![0.0; fg] };
    for (p, g) in preds.iter().zip(gts) {
        for k in 0..fg {
            let c = (k + 1) as u16;
            r.dsc[k] += metrics::dsc(p, g, c)? / n;
            r.iou[k] += metrics::iou(p, g, c)? / n;
            r.hd95[k] += metrics::hd95(p, g, c, spacing)? / n;
        }
    }
    Ok(r)
}

/// Per-class foreground DSC of the model on `samples` (eval mode), averaged over samples.
pub fn evaluate_dsc<T: Element>(model: &CpcaNet<T>, samples: &[&SegSample<T>], batch: usize) -> Result<Vec<f64>> {
    let k = model.config.num_classes;
    let mut sums = vec![0.0; k.saturating_sub(1)];
    for chunk in samples.chunks(batch.max(1)) {
        let (x, _) = collate(chunk)?;
        let masks = argmax_batch(&model.predict(&x)?)?;
        for (pred, s) in masks.iter().zip(chunk) {
            for (c, d) in metrics::foreground_dsc(pred, &s.mask, k)?.into_iter().enumerate() {
                sums[c] += d;
            }
        }
    }
    Ok(sums.into_iter().map(|s| s / samples.len() as f64).collect())
}

/// Names the first parameter holding a non-finite value.
fn first_non_finite<T: Element>(store: &ParamStore<T>) -> Option<String> {
    store.params().find(|(_, t)| !t.all_finite()).map(|(n, _)| n.to_string())
}

/// Trains `model` on `data`. `on_epoch` is called after every epoch with the
/// new log record, e.g. to stream the log or write checkpoints.
pub fn fit<T: Element>(
    model: &mut CpcaNet<T>,
    data: &[SegSample<T>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &CpcaNet<T>) -> Result<()>,
) -> Result<TrainLog> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    let k = model.config.num_classes;
    for s in data {
        s.check_labels(k)?;
        if s.channels() != model.config.in_channels {
            return Err(Error::Invalid(format!(
                "sample has {} channels, network expects {}",
                s.channels(),
                model.config.in_channels
            )));
        }
    }
    let (train_idx, val_idx) = split_indices(data.len(), cfg.val_fraction, cfg.seed);
    let eval_idx = if val_idx.is_empty() { &train_idx } else { &val_idx };
    let eval_set: Vec<&SegSample<T>> = eval_idx.iter().map(|&i| &data[i]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_f00d);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.momentum, &model.store);
    let mut log = TrainLog::default();
    let mut order = train_idx.clone();
    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.lr(cfg.learning_rate, epoch, cfg.epochs);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let augmented: Vec<SegSample<T>> =
                chunk.iter().map(|&i| augment(&data[i], &cfg.augment, &mut rng)).collect();
            let refs: Vec<&SegSample<T>> = augmented.iter().collect();
            let (x, labels) = collate(&refs)?;
            let diag =
                |e: Error| Error::Training(format!("epoch {} batch {}: non-finite value: {e}", epoch + 1, b + 1));
            let mut tape = Tape::new();
            let bound = model.store.bind(&mut tape, true);
            let xv = tape.constant(x);
            let logits = model.forward(&mut tape, &bound, xv, Mode::Train).map_err(diag)?;
            let loss = tape.combined_loss(logits, &labels, cfg.loss, cfg.dice).map_err(diag)?;
            let value = tape.value(loss).data()[0].as_f64();
            let grads = tape.backward(loss).map_err(diag)?;
            let grads = model.store.gradients(&tape, &bound, &grads);
            if let Some(i) = grads.iter().position(|g| !g.all_finite()) {
                let name = model.store.name(model.store.ids().nth(i).unwrap()).to_string();
                return Err(Error::Training(format!(
                    "epoch {} batch {}: non-finite gradient for parameter `{name}`",
                    epoch + 1,
                    b + 1
                )));
            }
            opt.step(&mut model.store, &grads, lr);
            if let Some(name) = first_non_finite(&model.store) {
                return Err(Error::Training(format!(
                    "epoch {} batch {}: parameter `{name}` became non-finite after the update",
                    epoch + 1,
                    b + 1
                )));
            }
            loss_sum += value;
            batches += 1;
        }
        let dsc = evaluate_dsc(model, &eval_set, cfg.batch_size)?;
        let rec = EpochRecord { epoch: epoch + 1, loss: loss_sum / batches as f64, dsc_mean: mean(&dsc), dsc, lr };
        on_epoch(&rec, model)?;
        log.records.push(rec);
    }
    Ok(log)
}
