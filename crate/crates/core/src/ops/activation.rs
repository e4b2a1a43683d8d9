use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::{cast, Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// Exact form `x * Phi(x)`.
    Gelu,
    Sigmoid,
}

#[inline]
pub fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn gelu<T: Element>(x: T) -> T {
    let half: T = cast(0.5);
    half * x * (T::one() + (x * cast(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[inline]
fn gelu_grad<T: Element>(x: T) -> T {
    let half: T = cast(0.5);
    let cdf = half * (T::one() + (x * cast(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-half * x * x).exp() * cast(0.398_942_280_401_432_7);
    cdf + x * pdf
}

impl Activation {
    pub fn apply<T: Element>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Gelu => gelu(x),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Gelu => "gelu",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

pub fn activation<T: Element>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    x.map(|v| kind.apply(v))
}

impl<T: Element> Tape<T> {
    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let y = activation(self.value(x), kind);
        self.push(kind.name(), y, vec![x], move |ctx, grad| {
            let (input, output) = (ctx.input(0).data(), ctx.output().data());
            let g = grad.data();
            let d: Vec<T> = match kind {
                Activation::Relu => {
                    input.iter().zip(g).map(|(&x, &g)| if x > T::zero() { g } else { T::zero() }).collect()
                }
                Activation::Gelu => input.iter().zip(g).map(|(&x, &g)| g * gelu_grad(x)).collect(),
                Activation::Sigmoid => output.iter().zip(g).map(|(&s, &g)| g * s * (T::one() - s)).collect(),
            };
            vec![Some(Tensor::from_parts(grad.shape().to_vec(), d))]
        })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Gelu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }
}
