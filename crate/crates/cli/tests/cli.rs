use std::path::Path;
use std::process::{Command, Output};

fn wfdiff(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wfdiff"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn wfdiff")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = wfdiff(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn metric(stdout: &str, key: &str) -> f64 {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(key)?.trim().parse().ok())
        .unwrap_or_else(|| panic!("no {key} in {stdout:?}"))
}

fn corpus(dir: &Path, count: &str, size: &str) {
    ok(&["synth", "--out", "c", "--count", count, "--size", size, "--seed", "3"], dir);
}

#[test]
fn dwt_idwt_round_trip_on_odd_image() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    corpus(d, "1", "23");
    let src = "c/pair_000_reference.ppm";
    ok(&["dwt", src, "--out", "bands"], d);
    for b in ["ll", "lh", "hl", "hh"] {
        assert!(d.join(format!("bands.{b}")).exists());
    }
    ok(&["idwt", "bands", "--out", "back.ppm", "--crop", "23x23"], d);
    let m = ok(&["metrics", "back.ppm", src], d);
    let psnr = metric(&m, "psnr_db");
    assert!(psnr > 50.0, "psnr {psnr}");
    assert_eq!(std::fs::read(d.join(src)).unwrap(), std::fs::read(d.join("back.ppm")).unwrap());
}

#[test]
fn self_metrics_are_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    corpus(d, "1", "16");
    let m = ok(&["metrics", "c/pair_000_degraded.ppm", "c/pair_000_degraded.ppm"], d);
    assert_eq!(metric(&m, "ssim"), 1.0);
    assert!(metric(&m, "psnr_db").is_infinite());
}

#[test]
fn fft_recombine_with_own_phase_reproduces_image() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    corpus(d, "1", "16");
    ok(&["fft", "c/pair_000_degraded.ppm", "--out", "spec"], d);
    ok(&["recombine", "--amp", "spec", "--phase", "spec", "--out", "r.ppm"], d);
    let m = ok(&["metrics", "r.ppm", "c/pair_000_degraded.ppm"], d);
    assert!(metric(&m, "psnr_db").is_infinite());
}

#[test]
fn analyze_mean_row_matches_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    corpus(d, "4", "16");
    ok(&["analyze", "--strategy", "s2", "--pairs", "c/manifest.csv", "--out", "r.csv"], d);
    let text = std::fs::read_to_string(d.join("r.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("pair_id,psnr_db,ssim"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    let (mean, body) = rows.split_last().unwrap();
    assert_eq!(body.len(), 4);
    assert_eq!(mean[0], "mean");
    for col in 1..3 {
        let vals: Vec<f64> = body.iter().map(|r| r[col].parse().unwrap()).collect();
        let want = vals.iter().sum::<f64>() / vals.len() as f64;
        let got: f64 = mean[col].parse().unwrap();
        assert!((got - want).abs() < 1e-9, "col {col}: {got} vs {want}");
    }
}

#[test]
fn swap_self_is_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    corpus(d, "1", "12");
    let a = "c/pair_000_reference.ppm";
    ok(&["swap", a, a, "--strategy", "s3", "--out-a", "x.ppm", "--out-b", "y.ppm"], d);
    let orig = std::fs::read(d.join(a)).unwrap();
    assert_eq!(std::fs::read(d.join("x.ppm")).unwrap(), orig);
    assert_eq!(std::fs::read(d.join("y.ppm")).unwrap(), orig);
}

#[test]
fn unknown_flag_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = wfdiff(&["dwt", "--bogus"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = wfdiff(&["metrics", "missing.ppm", "missing.ppm"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn train_and_enhance_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = r#"{
        "wfi": {"base_channels": 4, "heads": 2, "scales": 2, "blocks": [1, 1]},
        "denoiser": {"base_channels": 4, "levels": 1, "time_dim": 8},
        "diffusion": {"steps": 4},
        "train": {"stage2_steps": 3, "window": 1}
    }"#;
    std::fs::write(d.join("cfg.json"), cfg).unwrap();
    corpus(d, "1", "8");
    let pair = ["--degraded", "c/pair_000_degraded.ppm", "--clean", "c/pair_000_reference.ppm"];
    let mut s1 = vec!["train-stage1", "--config", "cfg.json", "--steps", "2", "--out", "m1.wfda"];
    s1.extend(pair);
    ok(&s1, d);
    let mut s2 = vec!["train-stage2", "--checkpoint", "m1.wfda", "--out", "m2.wfda"];
    s2.extend(pair);
    ok(&s2, d);
    for out in ["e1.ppm", "e2.ppm"] {
        ok(
            &["enhance", "--checkpoint", "m2.wfda", "--input", "c/pair_000_degraded.ppm", "--adjust", "--seed", "5", "--out", out],
            d,
        );
    }
    assert_eq!(std::fs::read(d.join("e1.ppm")).unwrap(), std::fs::read(d.join("e2.ppm")).unwrap());
    ok(
        &["sample", "--checkpoint", "m2.wfda", "--input", "c/pair_000_degraded.ppm", "--steps", "2", "--out", "s.ppm"],
        d,
    );
    assert!(d.join("s.ppm").exists());
}
