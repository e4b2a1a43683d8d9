use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::{Element, Tensor};

fn linear_forward<T: Element>(x: &[T], w: &[T], b: Option<&[T]>, n: usize, cin: usize, cout: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(n * cout);
    for row in x.chunks(cin).take(n) {
        for o in 0..cout {
            let mut acc = b.map_or(T::zero(), |b| b[o]);
            for (&xv, &wv) in row.iter().zip(&w[o * cin..(o + 1) * cin]) {
                acc = acc + xv * wv;
            }
            y.push(acc);
        }
    }
    y
}

/// Shapes of `x: [N, Cin]`, `w: [Cout, Cin]`, `b: [Cout]`.
fn linear_dims(x: &[usize], w: &[usize], b: Option<&[usize]>) -> Result<(usize, usize, usize)> {
    const OP: &str = "linear";
    let (&[n, cin], &[cout, wcin]) = (x, w) else {
        return shape_err(OP, format!("expected input [N, Cin] and weight [Cout, Cin], got {x:?} and {w:?}"));
    };
    if cin != wcin {
        return shape_err(OP, format!("input has {cin} features but weight expects {wcin}"));
    }
    if let Some(b) = b {
        if b != [cout] {
            return shape_err(OP, format!("bias must be [{cout}], got {b:?}"));
        }
    }
    Ok((n, cin, cout))
}

pub fn linear<T: Element>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (n, cin, cout) = linear_dims(x.shape(), w.shape(), b.map(|b| b.shape()))?;
    let y = linear_forward(x.data(), w.data(), b.map(|b| b.data()), n, cin, cout);
    Ok(Tensor::from_parts(vec![n, cout], y))
}

impl<T: Element> Tape<T> {
    /// `y = x W^T + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = linear(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let (n, cin, cout) = (y.shape()[0], self.shape(x)[1], y.shape()[1]);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("linear", y, inputs, move |ctx, grad| {
            let (xd, wd, g) = (ctx.input(0).data(), ctx.input(1).data(), grad.data());
            let dx = ctx.needs(0).then(|| {
                let mut dx = vec![T::zero(); n * cin];
                for r in 0..n {
                    for o in 0..cout {
                        let gv = g[r * cout + o];
                        for i in 0..cin {
                            dx[r * cin + i] = dx[r * cin + i] + gv * wd[o * cin + i];
                        }
                    }
                }
                Tensor::from_parts(vec![n, cin], dx)
            });
            let dw = ctx.needs(1).then(|| {
                let mut dw = vec![T::zero(); cout * cin];
                for o in 0..cout {
                    for r in 0..n {
                        let gv = g[r * cout + o];
                        for i in 0..cin {
                            dw[o * cin + i] = dw[o * cin + i] + gv * xd[r * cin + i];
                        }
                    }
                }
                Tensor::from_parts(vec![cout, cin], dw)
            });
            let mut out = vec![dx, dw];
            if ctx.has_input(2) {
                out.push(ctx.needs(2).then(|| {
                    let db = (0..cout).map(|o| (0..n).map(|r| g[r * cout + o]).sum()).collect();
                    Tensor::from_parts(vec![cout], db)
                }));
            }
            out
        })
    }
}
