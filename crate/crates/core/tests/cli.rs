use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mrirecon::io::{import_pbm, import_pgm, quantize_magnitude, read_mask, read_metrics_csv, read_record, METRICS_CSV_HEADER};
use mrirecon::mri_model::MaskKind;
use tempfile::tempdir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mrirecon"));
    c.env_remove("RECON_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn mask_generation_is_deterministic() {
    let dir = tempdir().unwrap();
    let (a, b) = (dir.path().join("a.cks"), dir.path().join("b.cks"));
    for p in [&a, &b] {
        ok(&["mask", "gen", "--kind", "gaussian2d", "--size", "48x40", "--acc", "6", "--seed", "3", "--out", s(p)]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let m = read_mask(&a).unwrap();
    assert_eq!((m.height(), m.width(), m.kind), (48, 40, MaskKind::Gaussian2d));
    assert_eq!(m.kept_count(), (48.0 * 40.0 / 6.0f64).round() as usize);

    let pbm = dir.path().join("m.pbm");
    ok(&["mask", "gen", "--size", "48x40", "--acc", "6", "--seed", "3", "--out", s(&pbm)]);
    let (h, w, bits) = import_pbm(&pbm).unwrap();
    assert_eq!((h, w), (48, 40));
    assert_eq!(bits, m.keep());
}

#[test]
fn seed_falls_back_to_the_environment() {
    let dir = tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a.cks"), dir.path().join("b.cks"), dir.path().join("c.cks"));
    ok(&["mask", "gen", "--seed", "42", "--out", s(&a)]);
    let out = bin().env("RECON_SEED", "42").args(["mask", "gen", "--out", s(&b)]).output().unwrap();
    assert!(out.status.success());
    ok(&["mask", "gen", "--out", s(&c)]);
    assert_eq!(read_mask(&a).unwrap(), read_mask(&b).unwrap());
    assert_eq!(read_mask(&c).unwrap().seed, 0);
}

#[test]
fn unknown_flags_exit_with_usage_error() {
    let out = run(&["mask", "gen", "--bogus", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_are_one_line_with_exit_one() {
    let dir = tempdir().unwrap();
    let bad = dir.path().join("bad.cks");
    fs::write(&bad, b"not a container at all").unwrap();
    let out = run(&["recon", "--model", "zerofill", "--in", s(&bad), "--out", s(&dir.path().join("x.pgm"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "), "{err}");

    let out = run(&["mask", "gen", "--kind", "spiral", "--out", s(&dir.path().join("m.cks"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_lists_defaults() {
    let out = ok(&["train", "--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for needle in ["--model", "--preset", "[default: 5]", "--config"] {
        assert!(text.contains(needle), "missing {needle}");
    }
}

#[test]
fn config_file_supplies_values_and_flags_win() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"size": "32x24", "acc": 8, "seed": 5}"#).unwrap();
    let (a, b) = (dir.path().join("a.cks"), dir.path().join("b.cks"));
    ok(&["mask", "gen", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["mask", "gen", "--config", s(&cfg), "--acc", "4", "--out", s(&b)]);
    let (ma, mb) = (read_mask(&a).unwrap(), read_mask(&b).unwrap());
    assert_eq!((ma.height(), ma.width(), ma.seed), (32, 24, 5));
    assert_eq!(ma.requested_acceleration, 8.0);
    assert_eq!(mb.requested_acceleration, 4.0);
}

#[test]
fn full_pipeline_from_phantoms_to_metrics() {
    let dir = tempdir().unwrap();
    let p = dir.path();
    let (phantoms, records) = (p.join("phantoms"), p.join("records"));
    ok(&["phantom", "gen", "--out", s(&phantoms), "--count", "3", "--seed", "7"]);
    assert!(phantoms.join("phantom_000007.cks").exists());

    let mask = p.join("mask.cks");
    ok(&["mask", "gen", "--size", "64x64", "--acc", "4", "--seed", "1", "--out", s(&mask)]);
    ok(&["simulate", "--phantom", s(&phantoms), "--mask", s(&mask), "--coils", "2", "--seed", "1", "--out", s(&records)]);
    let rec = read_record(&records.join("phantom_000007.cks")).unwrap();
    assert_eq!(rec.maps.n_coils(), 2);
    assert_eq!(rec.mask, read_mask(&mask).unwrap());

    let ckpt = p.join("m.ckpt");
    ok(&[
        "train", "--model", "cirim", "--preset", "desk", "--cascades", "1", "--iterations", "2", "--channels", "4",
        "--epochs", "1", "--seed", "1", "--data", s(&records), "--out", s(&ckpt),
    ]);
    let log = fs::read_to_string(p.join("m.log.csv")).unwrap();
    assert!(log.starts_with("epoch,split,loss,ssim\n0,train,"), "{log}");
    assert!(log.contains("0,val,"));

    let img = p.join("r.pgm");
    ok(&["recon", "--model", s(&ckpt), "--in", s(&records.join("phantom_000008.cks")), "--out", s(&img)]);
    assert_eq!(import_pgm(&img).unwrap().width, 64);

    let csv = p.join("metrics.csv");
    let methods = format!("{},cs", s(&ckpt));
    ok(&["eval", "--methods", &methods, "--data", s(&records), "--out", s(&csv), "--cs-iters", "5"]);
    let rows = read_metrics_csv(&csv).unwrap();
    assert_eq!(rows.len(), 3 * 3 + 3);
    assert_eq!(rows[0].method, "zerofill");
    assert!(rows.iter().all(|r| r.dataset == "records" && r.wall_ms.is_none()));
    let header = fs::read_to_string(&csv).unwrap();
    assert!(header.starts_with(&METRICS_CSV_HEADER.join(",")));
}

#[test]
fn zero_filled_recon_of_a_full_mask_matches_the_reference() {
    let dir = tempdir().unwrap();
    let p = dir.path();
    ok(&["phantom", "gen", "--out", s(&p.join("ph")), "--count", "1", "--seed", "2"]);
    ok(&["mask", "gen", "--kind", "full", "--size", "64x64", "--out", s(&p.join("full.cks"))]);
    let rec = p.join("rec.cks");
    ok(&[
        "simulate", "--phantom", s(&p.join("ph/phantom_000002.cks")), "--mask", s(&p.join("full.cks")),
        "--sigma", "0", "--out", s(&rec),
    ]);
    ok(&["recon", "--model", "zerofill", "--in", s(&rec), "--out", s(&p.join("zf.pgm"))]);
    let pgm = import_pgm(&p.join("zf.pgm")).unwrap();
    let reference = quantize_magnitude(&read_record(&rec).unwrap().reference);
    let worst = pgm.samples.iter().zip(&reference).map(|(a, b)| (*a as i32 - *b as i32).abs()).max().unwrap();
    // f32 storage of k-space leaves a few quantization levels of slack
    assert!(worst <= 4, "max deviation {worst}");
}
