use std::fs;

use cpca_core::io::config::{RunConfig, KEYS};
use cpca_core::io::{checkpoint, cpct, dataset_dir, pgm};
use cpca_core::{AttentionVariant, CpcaNet, Error, Mask, NetworkConfig, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny(v: AttentionVariant, seed: u64) -> CpcaNet<f64> {
    CpcaNet::build(&NetworkConfig::tiny(1, 3), v, seed).unwrap()
}

#[test]
fn cpct_layout_matches_hand_encoding() {
    let t = Tensor::<f32>::new(vec![2, 1], vec![1.0, -2.0]).unwrap();
    let mut bytes = Vec::new();
    cpct::encode(&t, &mut bytes);
    let mut want = b"CPCT".to_vec();
    want.extend([1, 0, 0, 0, 1, 2]);
    want.extend([2, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0]);
    want.extend([0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0]);
    assert_eq!(bytes, want);
    assert_eq!(cpct::decode::<f32>(&bytes).unwrap(), t);
}

#[test]
fn cpct_precision_conversion() {
    let x = Tensor::<f64>::randn(&[3, 4, 2], &mut ChaCha8Rng::seed_from_u64(0));
    let mut b64 = Vec::new();
    cpct::encode(&x, &mut b64);
    let down: Tensor<f32> = cpct::decode(&b64).unwrap();
    for (a, b) in down.data().iter().zip(x.data()) {
        assert_eq!(*a, *b as f32, "f64 -> f32 rounds to nearest");
    }
    let mut b32 = Vec::new();
    cpct::encode(&down, &mut b32);
    let up: Tensor<f64> = cpct::decode(&b32).unwrap();
    for (a, b) in up.data().iter().zip(down.data()) {
        assert_eq!(*a, *b as f64, "f32 -> f64 is exact");
    }
    let err = cpct::decode::<f64>(&b64[..b64.len() - 3]).unwrap_err();
    assert!(matches!(err, Error::Parse { .. }), "{err}");
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.cpck");
    let a = tiny(AttentionVariant::CpcaSequential, 1);
    checkpoint::save(&a.store, &path).unwrap();
    let mut b = tiny(AttentionVariant::CpcaSequential, 2);
    assert_ne!(a.store.params().next().unwrap().1, b.store.params().next().unwrap().1);
    checkpoint::load(&mut b.store, &path).unwrap();
    for ((na, ta), (nb, tb)) in a.store.params().zip(b.store.params()).chain(a.store.buffers().zip(b.store.buffers())) {
        assert_eq!(na, nb);
        let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(ta), bits(tb), "{na}");
    }
    let x = Tensor::randn(&[1, 1, 32, 32], &mut ChaCha8Rng::seed_from_u64(3));
    assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
}

#[test]
fn checkpoint_loads_across_precisions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.cpck");
    let a = CpcaNet::<f32>::build(&NetworkConfig::tiny(1, 2), AttentionVariant::Se, 0).unwrap();
    checkpoint::save(&a.store, &path).unwrap();
    let mut b = CpcaNet::<f64>::build(&NetworkConfig::tiny(1, 2), AttentionVariant::Se, 9).unwrap();
    checkpoint::load(&mut b.store, &path).unwrap();
    for ((_, ta), (_, tb)) in a.store.params().zip(b.store.params()) {
        assert_eq!(&ta.cast::<f64>(), tb);
    }
}

#[test]
fn corruption_is_detected_before_anything_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.cpck");
    let a = tiny(AttentionVariant::CpcaSequential, 1);
    checkpoint::save(&a.store, &path).unwrap();
    let bytes = fs::read(&path).unwrap();
    let mut target = tiny(AttentionVariant::CpcaSequential, 5);
    let before: Vec<Tensor<f64>> = target.store.params().map(|(_, t)| t.clone()).collect();
    for cut in [bytes.len() - 1, bytes.len() / 2, 20] {
        fs::write(&path, &bytes[..cut]).unwrap();
        let err = checkpoint::load(&mut target.store, &path).unwrap_err();
        assert!(matches!(err, Error::Corrupt(_)), "cut {cut}: {err}");
    }
    let mut flipped = bytes.clone();
    flipped[100] ^= 0x01;
    fs::write(&path, &flipped).unwrap();
    assert!(matches!(checkpoint::load(&mut target.store, &path).unwrap_err(), Error::Corrupt(_)));
    let after: Vec<Tensor<f64>> = target.store.params().map(|(_, t)| t.clone()).collect();
    assert_eq!(before, after, "no partial load");
}

#[test]
fn mismatched_architecture_names_every_spatial_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seq.cpck");
    let seq = tiny(AttentionVariant::CpcaSequential, 1);
    checkpoint::save(&seq.store, &path).unwrap();
    let mut ch = tiny(AttentionVariant::ChannelOnly, 1);
    let before: Vec<Tensor<f64>> = ch.store.params().map(|(_, t)| t.clone()).collect();
    let msg = checkpoint::load(&mut ch.store, &path).unwrap_err().to_string();

    let seq_names: Vec<&str> = seq.store.params().map(|(n, _)| n).collect();
    let ch_names: Vec<&str> = ch.store.params().map(|(n, _)| n).collect();
    let extra: Vec<&&str> = seq_names.iter().filter(|n| !ch_names.contains(n)).collect();
    assert!(!extra.is_empty());
    let unexpected = msg.split("unexpected: ").nth(1).expect("lists unexpected names");
    let listed: Vec<&str> = unexpected.split("; ").next().unwrap().split(", ").collect();
    assert_eq!(listed.len(), extra.len());
    for n in extra {
        assert!(n.contains(".attn.sa."), "{n}");
        assert!(listed.contains(n), "{n} missing from: {msg}");
    }
    assert!(!msg.contains("missing:"), "{msg}");
    let after: Vec<Tensor<f64>> = ch.store.params().map(|(_, t)| t.clone()).collect();
    assert_eq!(before, after);

    let mut wide = CpcaNet::<f64>::build(&NetworkConfig::tiny(1, 4), AttentionVariant::CpcaSequential, 1).unwrap();
    let msg = checkpoint::load(&mut wide.store, &path).unwrap_err().to_string();
    assert!(msg.contains("shape mismatch: head.weight"), "{msg}");
}

#[test]
fn pgm_sixteen_bit_is_big_endian() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.pgm");
    let mut bytes = b"P5\n# hand-made\n3 1\n65535\n".to_vec();
    bytes.extend([0x12, 0x34, 0xab, 0xcd, 0xff, 0xff]);
    fs::write(&path, &bytes).unwrap();
    let p = pgm::read(&path).unwrap();
    assert_eq!(p.samples, vec![0x1234, 0xabcd, 0xffff]);
    let img: Tensor<f64> = pgm::read_image(&path).unwrap();
    assert_eq!(img.shape(), &[1, 1, 3]);
    assert_eq!(img.data(), &[4660.0 / 65535.0, 43981.0 / 65535.0, 1.0]);
}

#[test]
fn pgm_eight_bit_scaling_and_mask_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pgm");
    let mut bytes = b"P5\n2 2\n255\n".to_vec();
    bytes.extend([0, 255, 255, 0]);
    fs::write(&path, &bytes).unwrap();
    let img: Tensor<f32> = pgm::read_image(&path).unwrap();
    assert_eq!(img.data(), &[0.0, 1.0, 1.0, 0.0]);

    let mut commented = b"P5\n# a comment\n2 2\n# another\n255\n".to_vec();
    commented.extend([0, 3, 1, 2]);
    fs::write(&path, &commented).unwrap();
    let mask = pgm::read_mask(&path).unwrap();
    assert_eq!(mask.labels, vec![0, 3, 1, 2]);
    let out = dir.path().join("out.pgm");
    pgm::write_mask(&mask, &out).unwrap();
    let mut plain = b"P5\n2 2\n255\n".to_vec();
    plain.extend([0, 3, 1, 2]);
    assert_eq!(fs::read(&out).unwrap(), plain);
    pgm::write_mask(&pgm::read_mask(&out).unwrap(), &out).unwrap();
    assert_eq!(fs::read(&out).unwrap(), plain);
}

#[test]
fn malformed_pgm_reports_byte_offset() {
    let cases: [(&[u8], usize); 4] =
        [(b"P2\n2 2\n255\n", 0), (b"P5\n2 x\n255\n", 5), (b"P5\n2 2\n", 7), (b"P5\n2 2\n255\n\x00", 12)];
    for (bytes, offset) in cases {
        match pgm::parse(bytes) {
            Err(Error::Parse { offset: o, .. }) => assert_eq!(o, offset, "{:?}", String::from_utf8_lossy(bytes)),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }
}

#[test]
fn dataset_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = cpca_core::io::synth::SynthSpec { num_samples: 3, ..Default::default() };
    let samples = cpca_core::io::synth::synth_dataset::<f64>(&spec).unwrap();
    dataset_dir::write_dataset(dir.path(), &samples, 4).unwrap();
    let manifest = fs::read_to_string(dir.path().join(dataset_dir::MANIFEST)).unwrap();
    assert!(manifest.starts_with("num_classes 4\nimg_0000.pgm msk_0000.pgm\n"));
    let (k, back) = dataset_dir::read_dataset::<f64>(dir.path()).unwrap();
    assert_eq!((k, back.len()), (4, 3));
    for (a, b) in samples.iter().zip(&back) {
        assert_eq!(a.mask, b.mask);
        for (x, y) in a.image.data().iter().zip(b.image.data()) {
            assert!((x.clamp(0.0, 1.0) - y).abs() <= 0.5 / 65535.0 + 1e-12);
        }
    }
    fs::write(dir.path().join(dataset_dir::MANIFEST), "num_classes 2\nimg_0000.pgm msk_0000.pgm\n").unwrap();
    assert!(dataset_dir::read_dataset::<f64>(dir.path()).is_err(), "labels exceed the class count");
}

#[test]
fn config_dump_is_a_fixed_point_for_every_key() {
    let text = RunConfig::default().to_text();
    assert_eq!(text.lines().count(), KEYS.len());
    let parsed = RunConfig::parse(&text).unwrap();
    assert_eq!(parsed.to_text(), text);

    let edited = text
        .replace("variant = cpca_sequential", "variant = cbam")
        .replace("train.epochs = 50", "train.epochs = 7")
        .replace("network.stage_depths = 2,2,2,2", "network.stage_depths = 1,2,1,1");
    let cfg = RunConfig::parse(&edited).unwrap();
    assert_eq!(cfg.variant, AttentionVariant::Cbam);
    assert_eq!(cfg.train.epochs, 7);
    assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    for key in KEYS {
        let v = cfg.get(key).unwrap();
        let mut c = RunConfig::default();
        c.set(key, &v).unwrap();
        assert_eq!(c.get(key).unwrap(), v, "{key}");
    }
}

#[test]
fn config_errors_name_the_problem() {
    let err = RunConfig::parse("train.epochs = many").unwrap_err().to_string();
    assert!(err.contains("line 1") && err.contains("train.epochs"), "{err}");
    let err = RunConfig::parse("\n\nbogus = 1").unwrap_err().to_string();
    assert!(err.contains("line 3") && err.contains("bogus"), "{err}");
    assert!(RunConfig::parse("network.embed_dim = 20").is_err(), "widths no longer match");
    assert!(RunConfig::parse("no equals sign").is_err());
    assert!(RunConfig::parse("infer.stride_factor = 1.5").is_err());
}

#[test]
fn masks_with_large_labels_use_sixteen_bits() {
    let m = Mask::new(1, 2, vec![3, 300]).unwrap();
    let p = pgm::mask_to_pgm(&m);
    assert_eq!(p.maxval, 65535);
    let bytes = pgm::encode(&p);
    assert_eq!(&bytes[bytes.len() - 4..], &[0, 3, 0x01, 0x2c]);
}
