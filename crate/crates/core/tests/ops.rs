use cpca_core::ops::linear::linear;
use cpca_core::ops::pool::global_pool;
use cpca_core::ops::{PoolMode, NORM_EPS};
use cpca_core::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn pooling_closed_forms_and_loop_oracle() {
    let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(global_pool(&x, PoolMode::Avg).unwrap().data(), &[2.5]);
    assert_eq!(global_pool(&x, PoolMode::Max).unwrap().data(), &[4.0]);
    let c = Tensor::full(&[1, 2, 3, 3], -0.75);
    assert_eq!(global_pool(&c, PoolMode::Avg).unwrap().data(), &[-0.75, -0.75]);
    assert_eq!(global_pool(&c, PoolMode::Max).unwrap().data(), &[-0.75, -0.75]);

    let x = Tensor::<f64>::randn(&[1, 3, 5, 5], &mut rng(0));
    let avg = global_pool(&x, PoolMode::Avg).unwrap();
    let max = global_pool(&x, PoolMode::Max).unwrap();
    for ch in 0..3 {
        let plane = x.plane(0, ch);
        let mut s = 0.0;
        let mut m = f64::NEG_INFINITY;
        for &v in plane {
            s += v;
            if v > m {
                m = v;
            }
        }
        assert_eq!(avg.data()[ch], s / 25.0);
        assert_eq!(max.data()[ch], m);
    }
}

#[test]
fn max_pool_gradient_goes_to_first_argmax() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::new(vec![1, 1, 2, 2], vec![5.0, 1.0, 5.0, 5.0]).unwrap());
    let m = tape.global_pool(x, PoolMode::Max).unwrap();
    let s = tape.sum(m).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn linear_matches_triple_loop() {
    let x = Tensor::<f64>::randn(&[2, 3], &mut rng(1));
    let w = Tensor::<f64>::randn(&[4, 3], &mut rng(2));
    let b = Tensor::<f64>::randn(&[4], &mut rng(3));
    let y = linear(&x, &w, Some(&b)).unwrap();
    for r in 0..2 {
        for o in 0..4 {
            let mut acc = b.data()[o];
            for i in 0..3 {
                acc += x.data()[r * 3 + i] * w.data()[o * 3 + i];
            }
            assert!((y.data()[r * 4 + o] - acc).abs() <= 1e-12);
        }
    }
    let eye = Tensor::from_fn(&[3, 3], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
    assert_eq!(linear(&x, &eye, Some(&Tensor::zeros(&[3]))).unwrap(), x);
    let y = linear(&x, &Tensor::zeros(&[4, 3]), Some(&b)).unwrap();
    assert_eq!(&y.data()[..4], b.data());
    assert!(linear(&x, &Tensor::zeros(&[4, 2]), None).is_err());
}

#[test]
fn backward_basics() {
    let mut tape = Tape::<f64>::new();
    let v = Tensor::<f64>::randn(&[3, 4], &mut rng(4));
    let x = tape.param(v.clone());
    let s = tape.sum(x).unwrap();
    assert_eq!(tape.backward(s).unwrap().get(x).unwrap(), &Tensor::ones(&[3, 4]));
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq).unwrap();
    assert_eq!(tape.backward(s).unwrap().get(x).unwrap(), &v.map(|a| 2.0 * a));
    assert!(tape.backward(sq).is_err(), "non-scalar root");
}

#[test]
fn broadcast_multiply_is_adjoint_consistent() {
    // <a*b, c> = <a, reduce(b*c)> = <b, reduce(a*c)>; the gradients of the left
    // side must be exactly those reductions
    let a = Tensor::<f64>::randn(&[2, 3, 1, 1], &mut rng(5));
    let b = Tensor::<f64>::randn(&[2, 3, 4, 5], &mut rng(6));
    let c = Tensor::<f64>::randn(&[2, 3, 4, 5], &mut rng(7));
    let mut tape = Tape::new();
    let (av, bv, cv) = (tape.param(a.clone()), tape.param(b.clone()), tape.constant(c.clone()));
    let ab = tape.mul(av, bv).unwrap();
    let abc = tape.mul(ab, cv).unwrap();
    let l = tape.sum(abc).unwrap();
    let g = tape.backward(l).unwrap();
    let ga = g.get(av).unwrap();
    for n in 0..2 {
        for ch in 0..3 {
            let want: f64 = b.plane(n, ch).iter().zip(c.plane(n, ch)).map(|(x, y)| x * y).sum();
            assert!((ga.at4(n, ch, 0, 0) - want).abs() < 1e-10);
        }
    }
    let dot_lhs = tape.value(l).item().unwrap();
    let dot_rhs: f64 = ga.data().iter().zip(a.data()).map(|(x, y)| x * y).sum();
    assert!((dot_lhs - dot_rhs).abs() < 1e-10);
    let gb = g.get(bv).unwrap();
    let dot_b: f64 = gb.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
    assert!((dot_lhs - dot_b).abs() < 1e-10);
}

#[test]
fn elementwise_examples() {
    let f = Tensor::<f64>::randn(&[1, 3, 2, 2], &mut rng(8));
    let mut tape = Tape::new();
    let (fv, ones) = (tape.constant(f.clone()), tape.constant(Tensor::ones(&[1, 3, 2, 2])));
    let y = tape.mul(fv, ones).unwrap();
    assert_eq!(tape.value(y), &f);
    let half = tape.constant(Tensor::full(&[1, 3, 1, 1], 0.5));
    let y = tape.mul(half, ones).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.5));
    let bad = tape.constant(Tensor::ones(&[1, 2, 1, 1]));
    assert!(tape.mul(fv, bad).is_err());
}

#[test]
fn normalization_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::full(&[1, 4, 2, 2], 3.0));
    let (g, b) = (tape.constant(Tensor::ones(&[4])), tape.constant(Tensor::zeros(&[4])));
    let y = tape.layer_norm(x, g, b, NORM_EPS).unwrap();
    assert!(tape.value(y).data().iter().all(|v| v.abs() < 1e-12));

    // per-channel mean 0, variance 1 over N, H, W
    let raw = Tensor::from_fn(&[2, 2, 1, 2], |i| [1.0, -1.0, 1.0, -1.0, -1.0, 1.0, -1.0, 1.0][i]);
    let x = tape.constant(raw.clone());
    let (g, b) = (tape.constant(Tensor::ones(&[2])), tape.constant(Tensor::zeros(&[2])));
    let (y, stats) = tape.batch_norm_train(x, g, b, NORM_EPS).unwrap();
    assert!(tape.value(y).max_abs_diff(&raw) < 1e-5);
    assert_eq!(stats.mean, vec![0.0, 0.0]);
    assert!((stats.var[0] - 4.0 / 3.0).abs() < 1e-12, "unbiased variance");

    let empty = tape.constant(Tensor::zeros(&[1, 0, 2, 2]));
    let (g0, b0) = (tape.constant(Tensor::zeros(&[0])), tape.constant(Tensor::zeros(&[0])));
    assert!(tape.layer_norm(empty, g0, b0, NORM_EPS).is_err());
}

#[test]
fn activation_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
    let r = tape.relu(x).unwrap();
    assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
    let s = tape.sigmoid(x).unwrap();
    assert_eq!(tape.value(s).data()[1], 0.5);
    let big = tape.constant(Tensor::new(vec![2], vec![-50.0, 50.0]).unwrap());
    let s = tape.sigmoid(big).unwrap();
    assert!(tape.value(s).data().iter().all(|&v| v > 0.0 && v <= 1.0));
    let g = tape.gelu(x).unwrap();
    let exact = 2.0 * 0.5 * (1.0 + libm::erf(2.0 / std::f64::consts::SQRT_2));
    assert!((tape.value(g).data()[2] - exact).abs() < 1e-15);
}

#[test]
fn ops_are_bitwise_deterministic() {
    let run = || {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::randn(&[2, 4, 9, 9], &mut rng(9)));
        let w = tape.param(Tensor::randn(&[4, 1, 5, 5], &mut rng(10)));
        let y = tape.conv2d(x, w, None, &cpca_core::ops::ConvSpec::same(5).groups(4)).unwrap();
        let y = tape.gelu(y).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        (tape.value(y).clone(), g.get(w).unwrap().clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn non_finite_values_are_rejected() {
    assert!(Tensor::new(vec![2], vec![1.0, f64::INFINITY]).unwrap().ensure_finite("t").is_err());
    assert!(Tensor::<f64>::new(vec![2, 2], vec![0.0; 3]).is_err());
}
