use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn evae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evae"))
        .args(args)
        .env("EVAE_LAB_THREADS", "1")
        .output()
        .expect("run evae")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small synthetic setup: 300 images of 8x8, 60 held out.
const TINY: &[&str] = &[
    "--data",
    "synth:two-blob",
    "--n",
    "300",
    "--hw",
    "8",
    "--dz",
    "4",
    "--hidden",
    "32",
    "--M",
    "20",
    "--epochs",
    "2",
];

fn train_into(out: &Path, extra: &[&str]) -> Output {
    let out = out.to_str().unwrap();
    let mut args = vec!["train", "--out", out];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    evae(&args)
}

/// One trained checkpoint shared by the eval and sample tests.
fn checkpoint() -> &'static PathBuf {
    static DIR: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    &DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let o = train_into(&out, &["--B", "1"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        (dir, out.join("model.ckpt"))
    })
    .1
}

fn manifest(dir: &Path) -> String {
    fs::read_to_string(dir.join("manifest.txt")).unwrap()
}

#[test]
fn help_and_bad_flags() {
    assert_eq!(code(&evae(&["--help"])), 0);
    assert_eq!(code(&evae(&["train", "--bogus"])), 1);
    assert_eq!(code(&evae(&[])), 1);
}

#[test]
fn lab_ik_epanechnikov() {
    let o = evae(&["lab", "ik", "--kernel", "epanechnikov", "--r", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
    let i: f64 = row[4].parse().unwrap();
    assert!((i - 0.6).abs() < 1e-6, "{out}");
}

#[test]
fn lab_ik_unknown_kernel_is_usage_error() {
    assert_eq!(code(&evae(&["lab", "ik", "--kernel", "cosine"])), 1);
}

#[test]
fn lab_lemma1_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = evae(&["lab", "lemma1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("lemma1.csv")).unwrap();
    assert!(csv.starts_with("kernel,I,J,margin,argmin"));
    let winners: Vec<&str> = csv.lines().filter(|l| l.ends_with(",true")).collect();
    assert_eq!(winners.len(), 1, "{csv}");
    assert!(winners[0].starts_with("epanechnikov,"), "{csv}");
    assert!(manifest(dir.path()).contains("status=ok"));
}

#[test]
fn lab_tm_rejects_gamma_outside_window() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tm");
    let o = evae(&["lab", "tm", "--gamma", "0.3", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("window"), "{}", stderr(&o));
    assert!(!out.join("tm.csv").exists());
}

#[test]
fn lab_tm_small_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = evae(&[
        "lab",
        "tm",
        "--m",
        "500",
        "--replications",
        "4",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("tm.csv")).unwrap();
    assert!(csv.starts_with("density,kernel,m,gamma,bandwidth,lo,hi,replications,seed,mean,se,limit"));
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn lab_bound_reports_cap() {
    let o = evae(&["lab", "bound", "--r", "1", "--B", "1", "--n", "100", "--n-mc", "20000"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let header: Vec<&str> = out.lines().next().unwrap().split(',').collect();
    let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
    let cap: f64 = row[header.iter().position(|h| *h == "cap").unwrap()].parse().unwrap();
    assert!((cap - 3.0 / 500.0).abs() < 1e-9, "{out}");
}

#[test]
fn train_writes_checkpoint_curves_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    let o = train_into(&out, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("model.ckpt").exists());
    let csv = fs::read_to_string(out.join("loss.csv")).unwrap();
    assert!(csv.starts_with("epoch,split,recon,divergence,total\n"));
    // epochs 0..=2 for both splits
    assert_eq!(csv.lines().count(), 1 + 6);
    let m = manifest(&out);
    assert!(
        m.contains("inputs_sha256=") && m.contains("status=ok") && m.contains("dz=4"),
        "{m}"
    );
    assert!(!out.join("FAILED").exists());
}

#[test]
fn training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&train_into(&a, &["--seed", "7"])), 0);
    assert_eq!(code(&train_into(&b, &["--seed", "7"])), 0);
    assert_eq!(
        fs::read(a.join("loss.csv")).unwrap(),
        fs::read(b.join("loss.csv")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("model.ckpt")).unwrap(),
        fs::read(b.join("model.ckpt")).unwrap()
    );
}

#[test]
fn config_file_and_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "model=vae\nepochs=1\n").unwrap();
    let out = dir.path().join("ok");
    let o = train_into(&out, &["--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    // the --epochs flag in TINY wins over the file
    assert!(manifest(&out).contains("model=vae\n") && manifest(&out).contains("epochs=2\n"));

    fs::write(&cfg, "beta=4\n").unwrap();
    let o = train_into(&dir.path().join("bad"), &["--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("valid keys"), "{}", stderr(&o));
}

#[test]
fn invalid_model_settings_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train_into(&dir.path().join("a"), &["--B", "-1"])), 1);
    assert_eq!(code(&train_into(&dir.path().join("b"), &["--model", "gan"])), 1);
}

#[test]
fn corrupt_idx_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let idx = dir.path().join("bad.idx");
    fs::write(&idx, [0u8, 0, 8, 3, 0, 0, 0, 5, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2]).unwrap();
    let spec = format!("idx:{}", idx.display());
    let o = evae(&[
        "train",
        "--data",
        &spec,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("byte"), "{}", stderr(&o));
}

#[test]
fn eval_writes_metrics_and_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eval");
    let ckpt = checkpoint().to_str().unwrap();
    let o = evae(&[
        "eval",
        "--checkpoint",
        ckpt,
        "--data",
        "synth:two-blob",
        "--n",
        "300",
        "--hw",
        "8",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(
        &header[..5],
        ["fid_proxy", "sharpness", "real_sharpness", "recon", "n_images"]
    );
    assert!(header.contains(&"B") && header.contains(&"dz"));
    assert_eq!(row[4], "60");
    assert!(row[..4].iter().all(|v| v.parse::<f64>().unwrap().is_finite()));
    let pgm = fs::read(out.join("recon_grid.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n"));
}

#[test]
fn eval_rejects_latent_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eval");
    let ckpt = checkpoint().to_str().unwrap();
    let o = evae(&[
        "eval",
        "--checkpoint",
        ckpt,
        "--dz",
        "16",
        "--data",
        "synth:two-blob",
        "--n",
        "300",
        "--hw",
        "8",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("d_z"), "{}", stderr(&o));
}

#[test]
fn eval_missing_checkpoint_leaves_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eval");
    let missing = dir.path().join("nope.ckpt");
    let o = evae(&[
        "eval",
        "--checkpoint",
        missing.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_ne!(code(&o), 0);
    assert!(!out.exists());
}

#[test]
fn sample_rejects_nonpositive_count() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = checkpoint().to_str().unwrap();
    let out = dir.path().join("s");
    for count in ["0", "-3"] {
        let o = evae(&[
            "sample",
            "--checkpoint",
            ckpt,
            "--count",
            count,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 1, "{}", stderr(&o));
    }
    assert!(!out.exists());
}

fn pixel_variance(dir: &Path) -> f64 {
    let csv = fs::read_to_string(dir.join("samples.csv")).unwrap();
    csv.lines().nth(1).unwrap().split(',').nth(3).unwrap().parse().unwrap()
}

#[test]
fn sample_scales_with_support() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = checkpoint().to_str().unwrap();
    let (narrow, wide) = (dir.path().join("narrow"), dir.path().join("wide"));
    for (b, out) in [("0.1", &narrow), ("10", &wide)] {
        let o = evae(&[
            "sample",
            "--checkpoint",
            ckpt,
            "--B",
            b,
            "--count",
            "64",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(out.join("samples.pgm").exists());
        assert!(manifest(out).contains(&format!("B={}", if b == "10" { "10.0" } else { b })));
    }
    assert!(pixel_variance(&wide) > pixel_variance(&narrow));
}
