use cpca_core::inference::{gaussian_weight_map, sliding_window_predict};
use cpca_core::loss::softmax_channels;
use cpca_core::{AttentionVariant, CpcaNet, NetworkConfig, Result, SegmentationModel, SlidingWindowConfig, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_net(classes: usize) -> CpcaNet<f64> {
    CpcaNet::build(&NetworkConfig::tiny(1, classes), AttentionVariant::CpcaSequential, 7).unwrap()
}

fn image(h: usize, w: usize, seed: u64) -> Tensor<f64> {
    Tensor::uniform(&[1, h, w], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Same logits at every pixel.
struct Constant(Vec<f64>);

impl SegmentationModel for Constant {
    fn num_classes(&self) -> usize {
        self.0.len()
    }

    fn logits(&self, input: &Tensor<f64>) -> Result<Tensor<f64>> {
        let [n, _, h, w] = input.dims4("constant").unwrap();
        let k = self.0.len();
        Ok(Tensor::from_fn(&[n, k, h, w], |i| self.0[(i / (h * w)) % k]))
    }
}

/// Two classes, logits `[mean(window), 0]` at every pixel of the window.
struct WindowMean;

impl SegmentationModel for WindowMean {
    fn num_classes(&self) -> usize {
        2
    }

    fn logits(&self, input: &Tensor<f64>) -> Result<Tensor<f64>> {
        let [_, _, h, w] = input.dims4("mean").unwrap();
        let m = input.sum() / input.numel() as f64;
        Ok(Tensor::from_fn(&[1, 2, h, w], |i| if i < h * w { m } else { 0.0 }))
    }
}

#[test]
fn image_equal_to_crop_matches_direct_forward() {
    let net = tiny_net(3);
    let img = image(32, 32, 1);
    let direct = net.predict(&img.reshape(&[1, 1, 32, 32]).unwrap()).unwrap();
    let p = softmax_channels(direct.data(), 1, 3, 32 * 32);
    let sw = sliding_window_predict(&net, &img, &SlidingWindowConfig::new(32, 32)).unwrap();
    let diff = sw.prob.data().iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff <= 1e-6, "{diff:e}");
}

#[test]
fn overlapping_windows_stay_on_the_simplex() {
    let net = tiny_net(4);
    let img = image(72, 50, 2);
    let pred = sliding_window_predict(&net, &img, &SlidingWindowConfig::new(32, 32)).unwrap();
    assert_eq!(pred.prob.shape(), &[4, 72, 50]);
    assert_eq!((pred.mask.height, pred.mask.width), (72, 50));
    let hw = 72 * 50;
    for i in 0..hw {
        let s: f64 = (0..4).map(|c| pred.prob.data()[c * hw + i]).sum();
        assert!((s - 1.0).abs() <= 1e-9, "pixel {i}: {s}");
    }
}

#[test]
fn constant_model_gives_constant_mask_at_any_stride() {
    let model = Constant(vec![0.1, 2.0, -1.0]);
    let img = image(37, 29, 3);
    let mut first = None;
    for stride_factor in [1.0, 0.5, 0.25] {
        let cfg = SlidingWindowConfig { stride_factor, ..SlidingWindowConfig::new(16, 8) };
        let pred = sliding_window_predict(&model, &img, &cfg).unwrap();
        assert!(pred.mask.labels.iter().all(|&l| l == 1));
        let first = first.get_or_insert_with(|| pred.prob.clone());
        assert!(pred.prob.max_abs_diff(first) < 1e-15);
    }
}

#[test]
fn two_window_overlap_matches_hand_accumulation() {
    // two identical rows of 6, crop 2 x 4, stride 2: one window row, windows
    // at columns 0 and 2 overlapping on columns 2 and 3; row weights cancel
    let row = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
    let img = Tensor::from_fn(&[1, 2, 6], |i| row[i % 6]);
    let cfg = SlidingWindowConfig::new(2, 4);
    let pred = sliding_window_predict(&WindowMean, &img, &cfg).unwrap();
    let sigma = 4.0 * 0.125;
    let g = |i: f64| {
        (-(i - 1.5f64).powi(2) / (2.0 * sigma * sigma)).exp() / (-(0.5f64).powi(2) / (2.0 * sigma * sigma)).exp()
    };
    let p0 = |m: f64| m.exp() / (m.exp() + 1.0);
    let (m1, m2) = (1.5, 3.5);
    for i in 0..12 {
        let col = i % 6;
        let want = match col {
            0 | 1 => p0(m1),
            4 | 5 => p0(m2),
            _ => {
                let (w1, w2) = (g(col as f64), g(col as f64 - 2.0));
                (w1 * p0(m1) + w2 * p0(m2)) / (w1 + w2)
            }
        };
        assert!((pred.prob.data()[i] - want).abs() < 1e-12, "pixel {i}");
    }
}

#[test]
fn gaussian_map_shape() {
    let map = gaussian_weight_map(&SlidingWindowConfig::new(5, 5));
    let sigma = 5.0 / 8.0;
    let want = (-(2.0 * 2.0f64.powi(2)) / (2.0 * sigma * sigma)).exp();
    assert!((map[0] / map[12] - want).abs() < 1e-15);
    assert_eq!(map[12], 1.0);
    for (h, w) in [(5, 5), (8, 6), (1, 7), (32, 32)] {
        let m = gaussian_weight_map(&SlidingWindowConfig::new(h, w));
        assert!(m.iter().all(|&v| v > 0.0 && v <= 1.0));
        assert_eq!(m.iter().cloned().fold(0.0, f64::max), 1.0);
        for y in 0..h {
            for x in 0..w {
                assert_eq!(m[y * w + x], m[y * w + (w - 1 - x)]);
                assert_eq!(m[y * w + x], m[(h - 1 - y) * w + x]);
            }
        }
    }
    let tiny = gaussian_weight_map(&SlidingWindowConfig { sigma_factor: 0.01, ..SlidingWindowConfig::new(64, 64) });
    assert_eq!(tiny[0], 1e-8);
}

#[test]
fn small_images_are_padded_and_cropped_back() {
    let net = tiny_net(2);
    let pred = sliding_window_predict(&net, &image(20, 9, 4), &SlidingWindowConfig::new(32, 32)).unwrap();
    assert_eq!(pred.prob.shape(), &[2, 20, 9]);
}

#[test]
fn prediction_is_deterministic() {
    let net = tiny_net(3);
    let img = image(48, 40, 5);
    let cfg = SlidingWindowConfig::new(32, 32);
    let a = sliding_window_predict(&net, &img, &cfg).unwrap();
    let b = sliding_window_predict(&net, &img, &cfg).unwrap();
    assert_eq!(a.prob, b.prob);
    assert_eq!(a.mask, b.mask);
}

#[test]
fn invalid_configs_are_rejected() {
    let model = Constant(vec![0.0, 1.0]);
    let img = image(8, 8, 6);
    let zero = SlidingWindowConfig { stride_factor: 0.01, ..SlidingWindowConfig::new(4, 4) };
    assert!(sliding_window_predict(&model, &img, &zero).is_err());
    assert!(sliding_window_predict(&model, &img, &SlidingWindowConfig::new(0, 4)).is_err());
    assert!(sliding_window_predict(&model, &Tensor::zeros(&[8, 8]), &SlidingWindowConfig::new(4, 4)).is_err());
}
