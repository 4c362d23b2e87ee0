//! Drives the `gsc` binary through every subcommand on a tiny configuration.

use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
# tiny end-to-end run
data.train_images = 16
data.eval_images = 8
codec.steps = 2
codec.batch_size = 8
sft.pretrain_steps = 1
sft.diffusion_steps = 1
sft.batch_size = 8
deepjscc.steps = 2
deepjscc.batch_size = 8
sweep.systems = GSC, NGF, DEEPJSCC, CLASSICAL, MU_GSC
channel.snr_grid = 0, 9
mu.users = 2
mu.micro_batch = 4
timeit.repetitions = 5
timeit.images = 8
";

fn gsc(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsc"))
        .args(args)
        .env("GSC_OUT", out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

#[test]
fn every_subcommand_runs_against_the_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("run");
    let common = ["--seed", "5", "--config", cfg.to_str().unwrap()];
    let with = |cmd: &'static str| [&[cmd][..], &common[..]].concat();

    ok(gsc(&with("train-codec"), &out));
    ok(gsc(&with("train-sft"), &out));
    ok(gsc(&with("baseline"), &out));
    for f in ["codec.ckpt", "sft.ckpt", "sft_pretrained.ckpt", "deepjscc.ckpt"] {
        assert!(out.join("checkpoints").join(f).exists(), "{f} missing");
    }
    assert!(out.join("baseline/results.csv").exists());

    let stdout = ok(gsc(&with("sweep"), &out));
    assert!(stdout.contains("rows appended"));
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    // 5 systems x 2 channels x 2 SNRs x 1 seed.
    assert_eq!(csv.lines().count(), 1 + 20);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",ok")), "{csv}");
    assert!(out.join("psnr_awgn.svg").exists() && out.join("lpips_rayleigh.svg").exists());

    ok(gsc(&with("mu-run"), &out));
    let mu: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("mu_timing.json")).unwrap()).unwrap();
    assert!(mu["speedup"].as_f64().unwrap() > 0.0);

    ok(gsc(&with("timeit"), &out));
    let t: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("timeit.json")).unwrap()).unwrap();
    assert_eq!(t["outputs_identical"], serde_json::Value::Bool(true));

    // The effective config is written back and reloads to the same values.
    let written = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(written.contains("seed = 5"), "{written}");
    let explicit = dir.path().join("explicit");
    ok(gsc(&["sweep", "--config", out.join("config.txt").to_str().unwrap(), "--out", explicit.to_str().unwrap()], dir.path()));
    assert!(explicit.join("results.csv").exists());
}

#[test]
fn sweep_without_checkpoints_marks_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, "data.eval_images = 4\nsweep.systems = GSC, CLASSICAL\nchannel.snr_grid = 9\nchannel.kinds = awgn\n").unwrap();
    ok(gsc(&["sweep", "--config", cfg.to_str().unwrap()], dir.path()));
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let gsc_row = csv.lines().find(|l| l.starts_with("GSC,")).unwrap();
    assert!(gsc_row.contains("NaN") && gsc_row.ends_with("missing_checkpoint:codec.ckpt"), "{gsc_row}");
    assert!(csv.lines().any(|l| l.starts_with("CLASSICAL,") && l.ends_with(",ok")));
}

#[test]
fn bad_config_is_rejected_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "codec.steps = 3\ncodec.stpes = 4\n").unwrap();
    let o = gsc(&["train-codec", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2") && err.contains("codec.stpes"), "{err}");
}

#[test]
fn train_sft_needs_a_codec() {
    let dir = tempfile::tempdir().unwrap();
    let o = gsc(&["train-sft", "--seed", "1"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("train-codec"));
}
