use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ucps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ucps")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ucps(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn render(dir: &Path, extra: &[&str]) {
    let mut args = vec!["render", "--size", "24", "--out", p(dir)];
    args.extend_from_slice(extra);
    ok(&args);
}

fn pngs(dir: &Path) -> usize {
    fs::read_dir(dir).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png")).count()
}

#[test]
fn render_writes_the_requested_images_and_defaults_to_twenty() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    render(&a, &["--images", "3"]);
    assert_eq!(pngs(&a.join("images")), 3);
    for f in ["mask.png", "intrinsics.json", "gt_depth.pfm", "gt_normals.pfm", "gt_lighting.json", "dataset.json"] {
        assert!(a.join(f).exists(), "{f}");
    }
    let b = tmp.path().join("b");
    render(&b, &[]);
    assert_eq!(pngs(&b.join("images")), 20);
}

#[test]
fn render_is_reproducible_given_the_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    let flags = ["--shape", "gaussian-bump", "--albedo", "constant", "--images", "2", "--seed", "4"];
    render(&a, &flags);
    render(&b, &flags);
    render(&c, &["--shape", "gaussian-bump", "--albedo", "constant", "--images", "2", "--seed", "5"]);
    let img = |d: &Path| fs::read(d.join("images/img_001.png")).unwrap();
    assert_eq!(img(&a), img(&b));
    assert_ne!(img(&a), img(&c));
}

#[test]
fn bad_arguments_fail_with_usage() {
    let out = ucps(&["render", "--shape", "teapot", "--out", "x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("possible values: gaussian-bump, hemisphere"));
    let out = ucps(&["render"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage: ucps render"));
    assert!(!ucps(&["frobnicate"]).status.success());
}

#[test]
fn init_writes_a_depth_with_mean_kappa_and_rejects_nonpositive_kappa() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    render(d, &["--images", "1"]);
    let (mask, k, out) = (d.join("mask.png"), d.join("intrinsics.json"), d.join("init.pfm"));
    let stdout = ok(&["init", "--mask", p(&mask), "--intrinsics", p(&k), "--kappa", "2.84", "--out", p(&out)]);
    assert!(stdout.contains("mean depth 2.84"), "{stdout}");
    let domain = ucps::io::load_mask(&mask).unwrap();
    let depth = ucps::io::load_masked_pfm(&out, &domain).unwrap();
    let mean = depth.iter().sum::<f64>() / depth.len() as f64;
    assert!((mean - 2.84).abs() < 1e-5, "{mean}");

    for bad in ["0", "-1"] {
        let r = ucps(&["init", "--mask", p(&mask), "--intrinsics", p(&k), "--kappa", bad, "--out", p(&out)]);
        assert!(!r.status.success());
    }

    let hemi = d.join("hemi.pfm");
    ok(&["init", "--mask", p(&mask), "--intrinsics", p(&k), "--init", "hemisphere", "--out", p(&hemi)]);
    assert_ne!(ucps::io::load_masked_pfm(&hemi, &domain).unwrap(), depth);
}

#[test]
fn zero_iterations_return_the_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    render(d, &["--images", "4"]);
    let (mask, k, init) = (d.join("mask.png"), d.join("intrinsics.json"), d.join("init.pfm"));
    ok(&["init", "--mask", p(&mask), "--intrinsics", p(&k), "--kappa", "10", "--out", p(&init)]);
    let out = d.join("out");
    let images = d.join("images");
    ok(&[
        "reconstruct", p(&images), "--mask", p(&mask), "--intrinsics", p(&k), "--init-depth", p(&init), "--max-iters", "0", "--out", p(&out),
    ]);
    let domain = ucps::io::load_mask(&mask).unwrap();
    assert_eq!(ucps::io::load_masked_pfm(&out.join("depth.pfm"), &domain).unwrap(), ucps::io::load_masked_pfm(&init, &domain).unwrap());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["iterations"], 0);
    assert_eq!(report["config"]["mu"], 2e-6);
}

#[test]
fn reconstruction_is_deterministic_and_reports_the_error() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    render(d, &["--images", "6"]);
    let (mask, k, images, gt) = (d.join("mask.png"), d.join("intrinsics.json"), d.join("images"), d.join("gt_normals.pfm"));
    let run = |out: &Path| {
        ok(&[
            "reconstruct", p(&images), "--mask", p(&mask), "--intrinsics", p(&k), "--kappa", "10", "--max-iters", "12", "--ground-truth", p(&gt),
            "--out", p(out),
        ])
    };
    let (a, b) = (d.join("a"), d.join("b"));
    let stdout = run(&a);
    run(&b);
    assert!(stdout.contains("mean angular error"), "{stdout}");
    for f in ["depth.pfm", "albedo_0.pfm", "albedo.png", "lighting.json", "mesh.obj", "normals.pfm", "energy.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    assert!(report["mae_degrees"].as_f64().unwrap() >= 0.0);
    let history = report["energy_history"].as_array().unwrap();
    assert_eq!(history.len() as u64, report["iterations"].as_u64().unwrap() + 1);
}

#[test]
fn evaluate_prints_zero_for_identical_maps_and_fails_on_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    render(d, &["--images", "1"]);
    let (mask, k) = (d.join("mask.png"), d.join("intrinsics.json"));
    let report = d.join("eval.json");
    let gt = d.join("gt_normals.pfm");
    let stdout = ok(&["evaluate", "--estimate", p(&gt), "--ground-truth", p(&gt), "--mask", p(&mask), "--intrinsics", p(&k), "--report", p(&report)]);
    assert!(stdout.contains("0.00°"), "{stdout}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(json["mae_degrees"].as_f64().unwrap() < 1e-3);

    // depth is turned into normals before comparing
    let depth = d.join("gt_depth.pfm");
    let stdout = ok(&["evaluate", "--estimate", p(&depth), "--ground-truth", p(&gt), "--mask", p(&mask), "--intrinsics", p(&k), "--report", p(&report)]);
    assert!(stdout.contains("0.00°"), "{stdout}");

    let other = d.join("other");
    ok(&["render", "--size", "30", "--images", "1", "--out", p(&other)]);
    let r = ucps(&[
        "evaluate", "--estimate", p(&other.join("gt_normals.pfm")), "--ground-truth", p(&gt), "--mask", p(&mask), "--intrinsics", p(&k), "--report",
        p(&report),
    ]);
    assert!(!r.status.success());
}
