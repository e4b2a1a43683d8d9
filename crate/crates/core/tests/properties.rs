use cpca_core::inference::{gaussian_weight_map, window_starts};
use cpca_core::io::{cpct, pgm};
use cpca_core::metrics::{dsc, hd95, iou};
use cpca_core::{Mask, SlidingWindowConfig, Tensor};
use proptest::prelude::*;

fn mask_pair() -> impl Strategy<Value = (Mask, Mask)> {
    (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
        let labels = || proptest::collection::vec(0u16..3, h * w);
        (labels(), labels()).prop_map(move |(a, b)| (Mask::new(h, w, a).unwrap(), Mask::new(h, w, b).unwrap()))
    })
}

proptest! {
    #[test]
    fn metrics_are_symmetric_and_bounded((a, b) in mask_pair()) {
        for c in 1..3 {
            let d = dsc(&a, &b, c).unwrap();
            prop_assert_eq!(d, dsc(&b, &a, c).unwrap());
            prop_assert!((0.0..=100.0).contains(&d));
            prop_assert!(iou(&a, &b, c).unwrap() <= d + 1e-12);
            let h = hd95(&a, &b, c, [1.0, 1.0]).unwrap();
            prop_assert_eq!(h, hd95(&b, &a, c, [1.0, 1.0]).unwrap());
            prop_assert!(h >= 0.0);
        }
    }

    #[test]
    fn identical_masks_score_perfectly((a, _) in mask_pair()) {
        for c in 1..3 {
            prop_assert_eq!(dsc(&a, &a, c).unwrap(), 100.0);
            prop_assert_eq!(hd95(&a, &a, c, [0.5, 2.0]).unwrap(), 0.0);
        }
    }

    #[test]
    fn windows_cover_every_position(len in 1usize..200, crop in 1usize..64, frac in 0.05f64..=1.0) {
        prop_assume!(crop <= len);
        let stride = ((frac * crop as f64).floor() as usize).max(1);
        let starts = window_starts(len, crop, stride);
        prop_assert_eq!(starts[0], 0);
        prop_assert_eq!(*starts.last().unwrap(), len - crop);
        prop_assert!(starts.windows(2).all(|s| s[0] < s[1] && s[1] - s[0] <= stride));
    }

    #[test]
    fn weight_map_is_positive_symmetric_and_peaks_at_one(h in 1usize..40, w in 1usize..40) {
        let m = gaussian_weight_map(&SlidingWindowConfig::new(h, w));
        let max = m.iter().copied().fold(0.0, f64::max);
        prop_assert_eq!(max, 1.0);
        for y in 0..h {
            for x in 0..w {
                let v = m[y * w + x];
                prop_assert!(v > 0.0);
                prop_assert_eq!(v, m[(h - 1 - y) * w + x]);
                prop_assert_eq!(v, m[y * w + w - 1 - x]);
            }
        }
    }

    #[test]
    fn cpct_round_trips(shape in proptest::collection::vec(1usize..5, 0..4), seed in any::<u64>()) {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|i| ((seed.wrapping_add(i as u64) % 1000) as f64 - 500.0) / 7.0).collect();
        let t = Tensor::new(shape, data).unwrap();
        let mut bytes = Vec::new();
        cpct::encode(&t, &mut bytes);
        prop_assert_eq!(cpct::decode::<f64>(&bytes).unwrap(), t);
    }

    #[test]
    fn pgm_round_trips(w in 1usize..20, h in 1usize..20, wide in any::<bool>(), seed in any::<u64>()) {
        let maxval: u16 = if wide { 65535 } else { 255 };
        let samples = (0..w * h).map(|i| (seed.wrapping_mul(i as u64 + 1) % (maxval as u64 + 1)) as u16).collect();
        let img = pgm::Pgm { width: w, height: h, maxval, samples };
        prop_assert_eq!(pgm::parse(&pgm::encode(&img)).unwrap(), img);
    }
}
