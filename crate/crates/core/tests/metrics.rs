use cpca_core::metrics::{dsc, hd95, hd95_binary, iou, squared_edt};
use cpca_core::Mask;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Boundary pixels, all-pairs nearest distances in both directions, then the
/// 95th percentile by linear interpolation at rank 0.95 * (n - 1).
fn brute_hd95(a: &[bool], b: &[bool], h: usize, w: usize, sp: [f64; 2]) -> f64 {
    let border = |m: &[bool]| -> Vec<(usize, usize)> {
        let fg = |y: i64, x: i64| y >= 0 && x >= 0 && y < h as i64 && x < w as i64 && m[y as usize * w + x as usize];
        let mut out = Vec::new();
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                if fg(y, x) && [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|&(dy, dx)| !fg(y + dy, x + dx)) {
                    out.push((y as usize, x as usize));
                }
            }
        }
        out
    };
    let (ea, eb) = (!a.contains(&true), !b.contains(&true));
    if ea && eb {
        return 0.0;
    }
    if ea || eb {
        return ((h as f64 * sp[0]).powi(2) + (w as f64 * sp[1]).powi(2)).sqrt();
    }
    let (ba, bb) = (border(a), border(b));
    let nearest = |from: &[(usize, usize)], to: &[(usize, usize)]| -> Vec<f64> {
        from.iter()
            .map(|&(y, x)| {
                to.iter()
                    .map(|&(v, u)| {
                        let dy = y as f64 - v as f64;
                        let dx = x as f64 - u as f64;
                        sp[0] * sp[0] * dy * dy + sp[1] * sp[1] * dx * dx
                    })
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .collect()
    };
    let mut all = nearest(&ba, &bb);
    all.extend(nearest(&bb, &ba));
    all.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let rank = 0.95 * (all.len() - 1) as f64;
    let (lo, hi) = (rank.floor() as usize, rank.ceil() as usize);
    all[lo] + (all[hi] - all[lo]) * (rank - lo as f64)
}

fn random_binary(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<bool> {
    match rng.gen_range(0..4) {
        // sparse noise
        0 => (0..h * w).map(|_| rng.gen_bool(0.15)).collect(),
        // dense noise
        1 => (0..h * w).map(|_| rng.gen_bool(0.6)).collect(),
        // a filled rectangle
        2 => {
            let (y0, x0) = (rng.gen_range(0..h), rng.gen_range(0..w));
            let (y1, x1) = (rng.gen_range(y0..h), rng.gen_range(x0..w));
            (0..h * w).map(|i| (y0..=y1).contains(&(i / w)) && (x0..=x1).contains(&(i % w))).collect()
        }
        // a blob with holes
        _ => {
            let (cy, cx) = (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64));
            let r = rng.gen_range(1.0..8.0f64);
            (0..h * w)
                .map(|i| {
                    let (dy, dx) = ((i / w) as f64 - cy, (i % w) as f64 - cx);
                    dy * dy + dx * dx <= r * r && rng.gen_bool(0.9)
                })
                .collect()
        }
    }
}

#[test]
fn hd95_equals_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let spacings = [[1.0, 1.0], [0.5, 2.0], [1.5, 1.0], [1.25, 0.75]];
    let mut checked = 0;
    for case in 0..800 {
        let (h, w) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
        let a = random_binary(&mut rng, h, w);
        let b = random_binary(&mut rng, h, w);
        let sp = spacings[case % spacings.len()];
        let got = hd95_binary(&a, &b, h, w, sp).unwrap();
        let want = brute_hd95(&a, &b, h, w, sp);
        assert_eq!(got.to_bits(), want.to_bits(), "case {case}: {h}x{w} {sp:?} got {got} want {want}");
        checked += 1;
    }
    assert!(checked >= 500);
}

#[test]
fn edt_equals_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..200 {
        let (h, w) = (rng.gen_range(1..=12), rng.gen_range(1..=12));
        let sites: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(0.1)).collect();
        let sp = [[1.0, 1.0], [0.5, 2.0]][rng.gen_range(0..2)];
        let d = squared_edt(&sites, h, w, sp);
        for (i, &got) in d.iter().enumerate() {
            let want = (0..h * w)
                .filter(|&j| sites[j])
                .map(|j| {
                    let dy = (i / w) as f64 - (j / w) as f64;
                    let dx = (i % w) as f64 - (j % w) as f64;
                    sp[0] * sp[0] * dy * dy + sp[1] * sp[1] * dx * dx
                })
                .fold(f64::INFINITY, f64::min);
            assert_eq!(got, want);
        }
    }
}

#[test]
fn hd95_examples() {
    let m = Mask::new(3, 3, vec![0, 1, 0, 1, 1, 1, 0, 1, 0]).unwrap();
    assert_eq!(hd95(&m, &m, 1, [1.0, 1.0]).unwrap(), 0.0);
    let a = Mask::new(1, 4, vec![0, 1, 0, 0]).unwrap();
    let b = Mask::new(1, 4, vec![0, 0, 1, 0]).unwrap();
    assert_eq!(hd95(&a, &b, 1, [1.0, 1.0]).unwrap(), 1.0);
    let empty = Mask::filled(4, 3, 0);
    let full = Mask::filled(4, 3, 1);
    assert_eq!(hd95(&empty, &empty, 1, [1.0, 1.0]).unwrap(), 0.0);
    assert_eq!(hd95(&empty, &full, 1, [1.0, 1.0]).unwrap(), 5.0);
    assert_eq!(hd95(&full, &empty, 1, [1.0, 1.0]).unwrap(), 5.0);
    assert_eq!(hd95(&full, &empty, 1, [2.0, 2.0]).unwrap(), 10.0);
}

#[test]
fn dsc_iou_examples_and_identity() {
    let g = Mask::new(1, 8, vec![1; 8]).unwrap();
    let p = Mask::new(1, 8, vec![1, 1, 1, 1, 0, 0, 0, 0]).unwrap();
    assert!((dsc(&p, &g, 1).unwrap() - 66.666_666_666_666_67).abs() < 1e-9);
    assert_eq!(dsc(&g, &g, 1).unwrap(), 100.0);
    assert_eq!(iou(&g, &g, 1).unwrap(), 100.0);
    let off = Mask::new(1, 8, vec![0; 8]).unwrap();
    let inv = Mask::new(1, 8, vec![0, 0, 0, 0, 1, 1, 1, 1]).unwrap();
    assert_eq!(dsc(&p, &inv, 1).unwrap(), 0.0);
    assert_eq!(iou(&p, &inv, 1).unwrap(), 0.0);
    assert_eq!(dsc(&off, &off, 1).unwrap(), 100.0);
    assert_eq!(iou(&off, &off, 1).unwrap(), 100.0);

    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..500 {
        let (h, w) = (rng.gen_range(1..10), rng.gen_range(1..10));
        let k = rng.gen_range(2..5u16);
        let a = Mask::new(h, w, (0..h * w).map(|_| rng.gen_range(0..k)).collect()).unwrap();
        let b = Mask::new(h, w, (0..h * w).map(|_| rng.gen_range(0..k)).collect()).unwrap();
        for c in 0..k {
            let (pa, pb) = (a.binary(c), b.binary(c));
            let inter = pa.iter().zip(&pb).filter(|(x, y)| **x && **y).count() as f64;
            let union = pa.iter().zip(&pb).filter(|(x, y)| **x || **y).count() as f64;
            let d = dsc(&a, &b, c).unwrap();
            let j = iou(&a, &b, c).unwrap();
            if union > 0.0 {
                assert!((j - 100.0 * inter / union).abs() < 1e-9);
            }
            assert!((j - d / (200.0 - d) * 100.0).abs() < 1e-9, "dsc {d} iou {j}");
            assert_eq!(d, dsc(&b, &a, c).unwrap());
        }
    }
}

#[test]
fn metrics_are_symmetric_and_congruence_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..200 {
        let (h, w) = (rng.gen_range(1..=12), rng.gen_range(1..=12));
        let bin = |rng: &mut ChaCha8Rng| {
            let v = random_binary(rng, h, w);
            Mask::new(h, w, v.into_iter().map(u16::from).collect()).unwrap()
        };
        let (a, b) = (bin(&mut rng), bin(&mut rng));
        let unit = [1.0, 1.0];
        let base = hd95(&a, &b, 1, unit).unwrap();
        assert_eq!(base, hd95(&b, &a, 1, unit).unwrap());
        let d = dsc(&a, &b, 1).unwrap();
        for (ta, tb) in
            [(a.flip_horizontal(), b.flip_horizontal()), (a.flip_vertical(), b.flip_vertical()), (a.rot90(), b.rot90())]
        {
            assert!((hd95(&ta, &tb, 1, unit).unwrap() - base).abs() < 1e-12);
            assert_eq!(dsc(&ta, &tb, 1).unwrap(), d);
        }
    }
}

#[test]
fn mismatched_masks_are_errors() {
    let a = Mask::filled(2, 3, 1);
    let b = Mask::filled(3, 2, 1);
    assert!(dsc(&a, &b, 1).is_err());
    assert!(hd95(&a, &b, 1, [1.0, 1.0]).is_err());
    assert!(Mask::new(2, 2, vec![0; 3]).is_err());
}
