use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};

use cpca_cli::{epoch_checkpoint, run_with, CONFIG_FILE, FINAL_CHECKPOINT, LOG_FILE};
use cpca_core::io::{cpct, pgm};
use cpca_core::Tensor;

const TINY: &str = "network.embed_dim = 16
network.stage_depths = 1,1,1,1
network.stage_widths = 16,32,64,128
network.num_classes = 3
train.val_fraction = 0
train.epochs = 2
infer.crop_h = 32
infer.crop_w = 32
";

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn cpca(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("cpca").chain(args.iter().copied());
    let code = run_with(argv, &mut out, &mut err);
    Run { code, out: String::from_utf8(out).unwrap(), err: String::from_utf8(err).unwrap() }
}

fn piped(args: &[&str], stdin: &str) -> (i32, String) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_cpca"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    let o = child.wait_with_output().unwrap();
    (o.status.code().unwrap(), String::from_utf8(o.stdout).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A tiny config and a 3-class synthetic dataset inside `dir`.
fn setup(dir: &Path) -> (String, String) {
    let cfg = dir.join("tiny.txt");
    fs::write(&cfg, TINY).unwrap();
    let data = dir.join("data");
    let r = cpca(&[
        "--seed",
        "5",
        "synth-data",
        "--out",
        p(&data),
        "--num-samples",
        "3",
        "--image-size",
        "32",
        "--num-classes",
        "3",
    ]);
    assert_eq!(r.code, 0, "{}", r.err);
    (p(&cfg).to_string(), p(&data).to_string())
}

#[test]
fn dump_config_lists_default_loss_weights() {
    let r = cpca(&["dump-config"]);
    assert_eq!(r.code, 0);
    assert!(r.out.contains("loss.lambda_dc = 1.2\n"), "{}", r.out);
    assert!(r.out.contains("loss.lambda_ce = 0.8\n"));
    assert!(r.out.contains("network.reduction = 16\n"));
    assert!(r.out.contains("infer.stride_factor = 0.5\n"));
}

#[test]
fn dump_config_through_stdin_is_a_fixed_point() {
    let first = cpca(&["--config", "tiny-does-not-matter", "dump-config"]);
    assert_eq!(first.code, 2, "missing config file is a runtime error");
    let dump = cpca(&["dump-config"]).out;
    let (code, again) = piped(&["--config", "-", "dump-config"], &dump);
    assert_eq!(code, 0);
    assert_eq!(again, dump);

    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path());
    let tiny_dump = cpca(&["--config", &cfg, "dump-config"]).out;
    let out = dir.path().join("run");
    let (code, _) =
        piped(&["--config", "-", "train", "--data", &data, "--out", p(&out), "--epochs", "1", "--quiet"], &tiny_dump);
    assert_eq!(code, 0);
    let written = fs::read_to_string(out.join(CONFIG_FILE)).unwrap();
    assert_eq!(written, tiny_dump.replace("train.epochs = 2", "train.epochs = 1"));
}

#[test]
fn seed_flag_overrides_the_config_seed() {
    let r = cpca(&["--seed", "42", "dump-config"]);
    assert!(r.out.contains("train.seed = 42\n"));
}

#[test]
fn usage_and_runtime_errors_have_distinct_codes() {
    let r = cpca(&["frobnicate"]);
    assert_eq!(r.code, 1);
    assert!(r.err.contains("frobnicate"));
    let r = cpca(&["train", "--data", "x"]);
    assert_eq!(r.code, 1, "missing --out");
    let r = cpca(&["--precision", "f16", "dump-config"]);
    assert_eq!(r.code, 1);
    let r = cpca(&["train", "--data", "/nonexistent/data", "--out", "/nonexistent/out"]);
    assert_eq!(r.code, 2);
    assert!(r.err.starts_with("error: "), "{}", r.err);
    let r = cpca(&["--help"]);
    assert_eq!(r.code, 0);
    assert!(r.out.contains("gradcheck"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.txt");
    fs::write(&cfg, "train.epochz = 3\n").unwrap();
    let r = cpca(&["--config", p(&cfg), "dump-config"]);
    assert_eq!(r.code, 2);
    assert!(r.err.contains("train.epochz") && r.err.contains("line 1"), "{}", r.err);
}

#[test]
fn gradcheck_passes_at_f64_and_refuses_f32() {
    let r = cpca(&["--precision", "f64", "gradcheck"]);
    assert_eq!(r.code, 0, "{}", r.out);
    let rows: Vec<&str> = r.out.lines().filter(|l| l.ends_with(" ok") || l.ends_with("FAIL")).collect();
    assert!(rows.len() >= 30);
    for row in rows {
        let err: f64 = row.split_whitespace().nth(2).unwrap().parse().unwrap();
        assert!(err < 1e-4, "{row}");
    }
    let r = cpca(&["--precision", "f64", "gradcheck", "--tolerance", "1e-30"]);
    assert_eq!(r.code, 2, "an unattainable tolerance fails");
    let r = cpca(&["gradcheck"]);
    assert_eq!(r.code, 2);
    assert!(r.err.contains("f64"));
}

#[test]
fn eval_of_identical_masks_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = setup(dir.path());
    let r = cpca(&["eval", "--pred", &data, "--gt", &data, "--num-classes", "3"]);
    assert_eq!(r.code, 0, "{}", r.err);
    let lines: Vec<&str> = r.out.lines().collect();
    assert_eq!(lines.len(), 4);
    for row in &lines[1..] {
        let f: Vec<&str> = row.split_whitespace().collect();
        assert_eq!(&f[1..], ["100.00", "100.00", "0.000"], "{row}");
    }
    let m = format!("{data}/msk_0001.pgm");
    let r = cpca(&["eval", "--pred", &m, "--gt", &m, "--num-classes", "2"]);
    assert_eq!(r.code, 2, "labels exceed the class count");
}

#[test]
fn train_writes_log_and_checkpoints_then_infer_and_eval_use_them() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path());
    let out = dir.path().join("run");
    let r = cpca(&[
        "--config",
        &cfg,
        "--seed",
        "1",
        "train",
        "--data",
        &data,
        "--out",
        p(&out),
        "--save-every",
        "1",
        "--quiet",
    ]);
    assert_eq!(r.code, 0, "{}", r.err);
    for f in [LOG_FILE, CONFIG_FILE, FINAL_CHECKPOINT, &epoch_checkpoint(1), &epoch_checkpoint(2)] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let log = fs::read_to_string(out.join(LOG_FILE)).unwrap();
    assert_eq!(log.lines().next().unwrap(), "epoch,loss,dsc_mean,dsc_class_1,dsc_class_2,lr");
    assert_eq!(log.lines().count(), 3);
    assert_eq!(fs::read(out.join(epoch_checkpoint(2))).unwrap(), fs::read(out.join(FINAL_CHECKPOINT)).unwrap());

    let ckpt = out.join(FINAL_CHECKPOINT);
    let (mask, prob) = (dir.path().join("m.pgm"), dir.path().join("p.cpct"));
    let input = format!("{data}/img_0000.pgm");
    let r = cpca(&[
        "infer",
        "--checkpoint",
        p(&ckpt),
        "--input",
        &input,
        "--crop",
        "32",
        "--out-mask",
        p(&mask),
        "--out-prob",
        p(&prob),
    ]);
    assert_eq!(r.code, 0, "{}", r.err);
    let m = pgm::read_mask(&mask).unwrap();
    assert_eq!((m.height, m.width), (32, 32));
    let pr: Tensor<f64> = cpct::decode(&fs::read(&prob).unwrap()).unwrap();
    assert_eq!(pr.shape(), &[3, 32, 32]);
    for i in 0..32 * 32 {
        let s: f64 = (0..3).map(|c| pr.data()[c * 1024 + i]).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    let r = cpca(&["eval", "--data", &data, "--checkpoint", p(&ckpt)]);
    assert_eq!(r.code, 0, "{}", r.err);
    assert!(r.out.starts_with("class"));

    let r = cpca(&["infer", "--checkpoint", p(&ckpt), "--input", &input, "--crop", "24", "--out-mask", p(&mask)]);
    assert_eq!(r.code, 2, "crop must suit the network");
    assert!(r.err.contains("pad"), "{}", r.err);

    let r = cpca(&["--precision", "f64", "infer", "--checkpoint", p(&ckpt), "--input", &input, "--out-mask", p(&mask)]);
    assert_eq!(r.code, 0, "f32 checkpoints load at f64: {}", r.err);
}

#[test]
fn identical_train_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = setup(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        let r = cpca(&[
            "--config",
            &cfg,
            "--seed",
            "9",
            "train",
            "--data",
            &data,
            "--out",
            p(&out),
            "--save-every",
            "1",
            "--quiet",
        ]);
        assert_eq!(r.code, 0, "{}", r.err);
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in [LOG_FILE, FINAL_CHECKPOINT, &epoch_checkpoint(1)] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    cpca(&["--config", &cfg, "--seed", "10", "train", "--data", &data, "--out", p(&c), "--quiet"]);
    assert_ne!(fs::read(a.join(FINAL_CHECKPOINT)).unwrap(), fs::read(c.join(FINAL_CHECKPOINT)).unwrap());
}

#[test]
fn class_count_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = setup(dir.path());
    let r = cpca(&["train", "--data", &data, "--out", p(&dir.path().join("o"))]);
    assert_eq!(r.code, 2);
    assert!(r.err.contains("num_classes"), "{}", r.err);
}

#[test]
fn flops_prints_table_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, _) = setup(dir.path());
    let csv = dir.path().join("f.csv");
    let r = cpca(&["--config", &cfg, "flops", "--height", "64", "--width", "64", "--csv", p(&csv)]);
    assert_eq!(r.code, 0, "{}", r.err);
    assert!(r.out.contains("total") && r.out.contains("2 FLOPs per multiply-accumulate"));
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("layer,kind,params,flops,output_shape\n"));
    let r = cpca(&["--config", &cfg, "flops", "--height", "40", "--width", "64"]);
    assert_eq!(r.code, 2);
}

#[test]
fn synth_data_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (d, seed) in [(&a, "3"), (&b, "3"), (&c, "4")] {
        assert_eq!(cpca(&["--seed", seed, "synth-data", "--out", p(d), "--num-samples", "2"]).code, 0);
    }
    let img = "img_0001.pgm";
    assert_eq!(fs::read(a.join(img)).unwrap(), fs::read(b.join(img)).unwrap());
    assert_ne!(fs::read(a.join(img)).unwrap(), fs::read(c.join(img)).unwrap());
    let r = cpca(&["synth-data", "--out", p(&a), "--image-size", "50"]);
    assert_eq!(r.code, 2);
    let r = cpca(&["synth-data", "--out", p(&a), "--family", "squares"]);
    assert_eq!(r.code, 1);
}
