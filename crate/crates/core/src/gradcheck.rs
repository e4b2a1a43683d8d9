//! Central finite-difference gradient checking at 64-bit precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{AttentionBlock, AttentionConfig, AttentionVariant};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::loss::{DiceOptions, LossWeights};
use crate::ops::{Activation, ConvSpec, Padding, PoolMode, NORM_EPS};
use crate::params::{Bound, ParamStore};
use crate::tensor::Tensor;

/// Floor on the denominator of the relative error.
pub const REL_FLOOR: f64 = 1e-8;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Maximum relative error for each input, in input order.
    pub max_rel_error: Vec<f64>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max() < self.tolerance
    }
}

/// Compares reverse-mode gradients of the scalar program `f` against central
/// differences with step `h`, for every element of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    if tape.value(loss).numel() != 1 {
        return Err(Error::Invalid("grad_check program must return a scalar".into()));
    }
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get_or_zeros(&tape, v)).collect();

    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut max_rel_error = Vec::with_capacity(inputs.len());
    for (i, grad) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(grad.data()[j], numeric));
        }
        max_rel_error.push(worst);
    }
    Ok(GradCheckReport { max_rel_error, tolerance: tol })
}

type Program = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Send + Sync>;

/// One named scalar program of the default suite with its inputs.
pub struct SuiteCase {
    pub name: String,
    pub inputs: Vec<Tensor<f64>>,
    program: Program,
}

impl SuiteCase {
    pub fn check(&self, h: f64, tol: f64) -> Result<GradCheckReport> {
        grad_check(|t, v| (self.program)(t, v), &self.inputs, h, tol)
    }

    /// Number of scalar inputs perturbed by [`check`](Self::check).
    pub fn numel(&self) -> usize {
        self.inputs.iter().map(Tensor::numel).sum()
    }
}

/// `sum(y * r)` for a fixed random `r`, so every output element gets a distinct weight.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = Tensor::randn(tape.shape(y), &mut rng);
    let r = tape.constant(r);
    let prod = tape.mul(y, r)?;
    tape.sum(prod)
}

fn case<F>(name: impl Into<String>, inputs: Vec<Tensor<f64>>, f: F) -> SuiteCase
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Send + Sync + 'static,
{
    SuiteCase { name: name.into(), inputs, program: Box::new(f) }
}

/// Every differentiable op, the three losses, and each attention variant,
/// on `N(0, 1)` inputs and weights drawn from `seed`.
pub fn default_suite(seed: u64) -> Result<Vec<SuiteCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut randn = |shape: &[usize]| Tensor::<f64>::randn(shape, &mut rng);
    let mut cases = Vec::new();

    let spec = ConvSpec::same(3).bias(true);
    cases.push(case("conv2d", vec![randn(&[2, 3, 5, 5]), randn(&[4, 3, 3, 3]), randn(&[4])], move |t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), &spec)?;
        project(t, y, 1)
    }));
    let spec = ConvSpec::new(3, 3).stride(2).padding(Padding::uniform(1)).groups(2).bias(true);
    cases.push(case(
        "conv2d_strided_grouped",
        vec![randn(&[1, 4, 7, 6]), randn(&[6, 2, 3, 3]), randn(&[6])],
        move |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), &spec)?;
            project(t, y, 2)
        },
    ));
    cases.push(case("depthwise_strip_vertical", vec![randn(&[1, 3, 6, 6]), randn(&[3, 1, 5, 1])], |t, v| {
        let y = t.depthwise_strip_conv(v[0], v[1], 5)?;
        project(t, y, 3)
    }));
    cases.push(case("depthwise_strip_horizontal", vec![randn(&[1, 3, 6, 6]), randn(&[3, 1, 1, 7])], |t, v| {
        let y = t.depthwise_strip_conv(v[0], v[1], 7)?;
        project(t, y, 4)
    }));
    for k in [2usize, 4] {
        let spec = ConvSpec::new(k, k).stride(k).bias(true);
        cases.push(case(
            format!("transpose_conv2d_s{k}"),
            vec![randn(&[1, 3, 3, 3]), randn(&[3, 2, k, k]), randn(&[2])],
            move |t, v| {
                let y = t.transpose_conv2d(v[0], v[1], Some(v[2]), &spec)?;
                project(t, y, 5)
            },
        ));
    }
    for (name, mode) in [("global_avg_pool", PoolMode::Avg), ("global_max_pool", PoolMode::Max)] {
        cases.push(case(name, vec![randn(&[2, 3, 4, 4])], move |t, v| {
            let y = t.global_pool(v[0], mode)?;
            project(t, y, 6)
        }));
    }
    for (name, mode) in [("channel_avg_pool", PoolMode::Avg), ("channel_max_pool", PoolMode::Max)] {
        cases.push(case(name, vec![randn(&[2, 3, 4, 4])], move |t, v| {
            let y = t.channel_pool(v[0], mode)?;
            project(t, y, 7)
        }));
    }
    for (name, kind) in [("relu", Activation::Relu), ("gelu", Activation::Gelu), ("sigmoid", Activation::Sigmoid)] {
        cases.push(case(name, vec![randn(&[2, 3, 3, 3])], move |t, v| {
            let y = t.activation(v[0], kind)?;
            project(t, y, 8)
        }));
    }
    cases.push(case("layer_norm", vec![randn(&[2, 4, 3, 3]), randn(&[4]), randn(&[4])], |t, v| {
        let y = t.layer_norm(v[0], v[1], v[2], NORM_EPS)?;
        project(t, y, 9)
    }));
    cases.push(case("batch_norm_train", vec![randn(&[2, 3, 3, 3]), randn(&[3]), randn(&[3])], |t, v| {
        let (y, _) = t.batch_norm_train(v[0], v[1], v[2], NORM_EPS)?;
        project(t, y, 10)
    }));
    let mean: Vec<f64> = randn(&[3]).into_data();
    let var: Vec<f64> = randn(&[3]).into_data().into_iter().map(|v| v * v + 0.5).collect();
    cases.push(case("batch_norm_eval", vec![randn(&[2, 3, 3, 3]), randn(&[3]), randn(&[3])], move |t, v| {
        let y = t.batch_norm_eval(v[0], v[1], v[2], &mean, &var, NORM_EPS)?;
        project(t, y, 11)
    }));
    cases.push(case("mul_broadcast", vec![randn(&[2, 3, 4, 4]), randn(&[2, 3, 1, 1])], |t, v| {
        let y = t.mul(v[0], v[1])?;
        project(t, y, 12)
    }));
    cases.push(case("add_broadcast", vec![randn(&[2, 3, 4, 4]), randn(&[1, 3, 1, 1])], |t, v| {
        let y = t.add(v[0], v[1])?;
        project(t, y, 13)
    }));
    cases.push(case("scale", vec![randn(&[2, 5])], |t, v| {
        let y = t.scale(v[0], -1.7)?;
        project(t, y, 14)
    }));
    cases.push(case("reshape", vec![randn(&[2, 6])], |t, v| {
        let y = t.reshape(v[0], &[3, 4])?;
        project(t, y, 15)
    }));
    cases.push(case("concat_channels", vec![randn(&[1, 2, 3, 3]), randn(&[1, 1, 3, 3])], |t, v| {
        let y = t.concat_channels(&[v[0], v[1]])?;
        project(t, y, 16)
    }));
    cases.push(case("linear", vec![randn(&[3, 4]), randn(&[5, 4]), randn(&[5])], |t, v| {
        let y = t.linear(v[0], v[1], Some(v[2]))?;
        project(t, y, 17)
    }));

    let labels: Vec<u16> = {
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x1abe1);
        (0..2 * 4 * 4).map(|_| r.gen_range(0..3)).collect()
    };
    let l = labels.clone();
    cases.push(case("cross_entropy", vec![randn(&[2, 3, 4, 4])], move |t, v| t.cross_entropy(v[0], &l)));
    let l = labels.clone();
    cases
        .push(case("dice_loss", vec![randn(&[2, 3, 4, 4])], move |t, v| t.dice_loss(v[0], &l, DiceOptions::default())));
    let l = labels;
    cases.push(case("combined_loss", vec![randn(&[2, 3, 4, 4])], move |t, v| {
        t.combined_loss(v[0], &l, LossWeights::default(), DiceOptions::default())
    }));

    for variant in AttentionVariant::ALL {
        cases.push(attention_case(variant, &mut rng)?);
    }
    Ok(cases)
}

/// Whole attention block with every parameter and the input as checked inputs.
fn attention_case<R: Rng>(variant: AttentionVariant, rng: &mut R) -> Result<SuiteCase> {
    let mut cfg = AttentionConfig::new(8, variant);
    cfg.reduction = 4;
    let mut store = ParamStore::<f64>::new();
    let block = AttentionBlock::build(&mut store, "attn", &cfg, rng)?;
    let mut inputs: Vec<Tensor<f64>> =
        store.params().map(|(_, t)| Tensor::randn(t.shape(), rng).map(|x| 0.5 * x)).collect();
    let n = inputs.len();
    inputs.push(Tensor::randn(&[1, 8, 6, 6], rng));
    Ok(case(format!("attention_{variant}"), inputs, move |t, v| {
        let bound = Bound::from_vars(v[..n].to_vec());
        let out = block.forward(t, &bound, v[n])?;
        project(t, out.output, 18)
    }))
}
