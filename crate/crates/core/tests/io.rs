mod common;

use std::fs;
use std::path::Path;

use mrirecon::io::{
    export_image, export_mask, import_pbm, import_pgm, load_checkpoint, quantize_magnitude, read_checkpoint,
    read_container, read_mask, read_metrics_csv, read_phantom, read_record, save_checkpoint, write_container,
    write_mask, write_metrics_csv, write_phantom, write_record, Container, MetricsRow, MAGIC, METRICS_CSV_HEADER,
};
use mrirecon::mri_model::{ComplexImage, MaskKind};
use mrirecon::nets::{init_params, ModelConfig, ModelKind};
use mrirecon::phantom::{make_phantom, PhantomFamily};
use mrirecon::sampling::{gaussian2d_mask, MaskSpec};
use mrirecon::Error;
use num_complex::Complex64;
use serde_json::json;
use tempfile::tempdir;

fn sample_container() -> Container {
    let mut c = Container::new("test", json!({ "note": "hello" }));
    c.push_real("r", &[2, 3], &[1.0, -2.0, 3.5, 0.0, 1e-3, 7.0]);
    c.push_bool("b", &[4], &[true, false, false, true]);
    c.push_complex("c", &[2], &[Complex64::new(1.0, -1.0), Complex64::new(0.25, 8.0)]);
    c
}

fn f32_exact(v: f64) -> f64 {
    v as f32 as f64
}

#[test]
fn container_round_trip_preserves_arrays_and_meta() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("a.cks");
    write_container(&p, &sample_container()).unwrap();
    let c = read_container(&p).unwrap();
    assert_eq!(c.kind, "test");
    assert_eq!(c.meta["note"], "hello");
    assert_eq!(c.get("r").unwrap().real().unwrap(), vec![1.0, -2.0, 3.5, 0.0, f32_exact(1e-3), 7.0]);
    assert_eq!(c.get("b").unwrap().boolean().unwrap(), vec![true, false, false, true]);
    assert_eq!(c.get("c").unwrap().complex().unwrap()[1], Complex64::new(0.25, 8.0));
    assert_eq!(c.to_bytes().unwrap(), fs::read(&p).unwrap());
}

#[test]
fn bad_magic_is_reported() {
    let mut bytes = sample_container().to_bytes().unwrap();
    bytes[0] = b'X';
    let err = Container::from_bytes(&bytes, Path::new("x.cks")).unwrap_err();
    assert!(matches!(err, Error::BadMagic { .. }), "{err}");
}

#[test]
fn truncation_reports_the_offset() {
    let bytes = sample_container().to_bytes().unwrap();
    let err = Container::from_bytes(&bytes[..bytes.len() - 10], Path::new("x.cks")).unwrap_err();
    match err {
        Error::Truncated { offset, needed, len } => {
            assert_eq!(len, bytes.len() - 10);
            assert!(offset + needed > len);
        }
        e => panic!("expected truncation, got {e}"),
    }
    let err = Container::from_bytes(&bytes[..5], Path::new("x.cks")).unwrap_err();
    assert!(matches!(err, Error::Truncated { offset: 0, .. }));
}

#[test]
fn flipped_payload_bit_fails_the_checksum() {
    let mut bytes = sample_container().to_bytes().unwrap();
    let n = bytes.len();
    bytes[n - 8] ^= 0x01;
    let err = Container::from_bytes(&bytes, Path::new("x.cks")).unwrap_err();
    assert!(matches!(err, Error::Checksum { .. }), "{err}");
}

#[test]
fn unknown_version_is_rejected() {
    let bytes = sample_container().to_bytes().unwrap();
    let hl = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header = String::from_utf8(bytes[16..16 + hl].to_vec()).unwrap();
    let patched = header.replace("\"version\":1", "\"version\":9");
    assert_eq!(patched.len(), header.len());
    let mut out = bytes[..16].to_vec();
    out.extend_from_slice(patched.as_bytes());
    out.extend_from_slice(&bytes[16 + hl..bytes.len() - 4]);
    let crc = crc32fast::hash(&out[MAGIC.len()..]);
    out.extend_from_slice(&crc.to_le_bytes());
    let err = Container::from_bytes(&out, Path::new("x.cks")).unwrap_err();
    assert!(matches!(err, Error::Version { found: 9, expected: 1 }), "{err}");
}

#[test]
fn trailing_garbage_is_rejected() {
    let mut bytes = sample_container().to_bytes().unwrap();
    bytes.push(0);
    assert!(Container::from_bytes(&bytes, Path::new("x.cks")).is_err());
}

#[test]
fn record_round_trip_is_stable() {
    let dir = tempdir().unwrap();
    let rec = common::small_record(3, 2);
    let (a, b) = (dir.path().join("a.cks"), dir.path().join("b.cks"));
    write_record(&a, &rec).unwrap();
    let back = read_record(&a).unwrap();
    assert_eq!(back.meta, rec.meta);
    assert_eq!(back.mask, rec.mask);
    assert_eq!(back.lesion_mask, rec.lesion_mask);
    for (p, q) in back.kspace.samples.data().iter().zip(rec.kspace.samples.data()) {
        assert_eq!(p.re, f32_exact(q.re));
        assert_eq!(p.im, f32_exact(q.im));
    }
    write_record(&b, &back).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn mask_and_phantom_round_trip() {
    let dir = tempdir().unwrap();
    let mask = gaussian2d_mask(40, 36, 5.0, 0.7, 0.02, 17).unwrap();
    let p = dir.path().join("m.cks");
    write_mask(&p, &mask).unwrap();
    assert_eq!(read_mask(&p).unwrap(), mask);
    // a mask file is not a record
    assert!(read_record(&p).is_err());

    let ph = make_phantom(&PhantomFamily { height: 32, width: 32, ..PhantomFamily::default() }.sample(4)).unwrap();
    let q = dir.path().join("p.cks");
    write_phantom(&q, &ph, json!({})).unwrap();
    let back = read_phantom(&q).unwrap();
    assert_eq!(back.wm_mask, ph.wm_mask);
    assert_eq!(back.image.pixels[100].re, f32_exact(ph.image.pixels[100].re));
}

#[test]
fn generation_is_deterministic_per_seed() {
    let a = common::small_record(77, 2);
    let b = common::small_record(77, 2);
    let c = common::small_record(78, 2);
    assert_eq!(a.kspace.samples.data(), b.kspace.samples.data());
    assert_eq!(a.reference.pixels, b.reference.pixels);
    assert_ne!(a.reference.pixels, c.reference.pixels);
    let s = MaskSpec::new(MaskKind::Equidistant1d, 4.0);
    assert_eq!(s.generate(32, 32, 5).unwrap(), s.generate(32, 32, 5).unwrap());
}

#[test]
fn pgm_holds_the_quantized_magnitude() {
    let dir = tempdir().unwrap();
    let (h, w) = (5, 7);
    let img = ComplexImage::new(h, w, (0..h * w).map(|i| Complex64::from_polar(i as f64 * 0.1, i as f64)).collect()).unwrap();
    let p = dir.path().join("i.pgm");
    export_image(&img, &p).unwrap();
    let pgm = import_pgm(&p).unwrap();
    assert_eq!((pgm.width, pgm.height, pgm.maxval), (w, h, 65535));
    assert_eq!(pgm.samples, quantize_magnitude(&img));
    assert_eq!(*pgm.samples.iter().max().unwrap(), 65535);
    for (q, m) in pgm.samples.iter().zip(img.magnitude()) {
        let back = *q as f64 / 65535.0 * 3.4;
        assert!((back - m).abs() <= 0.5 * 3.4 / 65535.0 + 1e-12);
    }
}

#[test]
fn zero_image_quantizes_to_zero() {
    let img = ComplexImage::new(2, 2, vec![Complex64::new(0.0, 0.0); 4]).unwrap();
    assert_eq!(quantize_magnitude(&img), vec![0; 4]);
}

#[test]
fn pbm_round_trips_odd_widths() {
    let dir = tempdir().unwrap();
    let mask = gaussian2d_mask(9, 13, 3.0, 0.7, 0.02, 1).unwrap();
    let p = dir.path().join("m.pbm");
    export_mask(&mask, &p).unwrap();
    let (h, w, bits) = import_pbm(&p).unwrap();
    assert_eq!((h, w), (9, 13));
    assert_eq!(bits, mask.keep());
}

#[test]
fn checkpoint_round_trip_and_config_mismatch() {
    let dir = tempdir().unwrap();
    let config = ModelConfig::desk(ModelKind::Cirim);
    let params = init_params(&config, 4).unwrap();
    let p = dir.path().join("m.ckpt");
    save_checkpoint(&p, &config, &params, json!({ "epoch": 2 })).unwrap();
    let ck = load_checkpoint(&p, &config).unwrap();
    assert_eq!(ck.meta["epoch"], 2);
    assert_eq!(ck.params.count(), params.count());
    for (a, b) in ck.params.flatten().iter().zip(params.flatten()) {
        assert_eq!(*a, f32_exact(b));
    }
    let other = ModelConfig::desk(ModelKind::Rim);
    assert!(matches!(load_checkpoint(&p, &other), Err(Error::ConfigMismatch(_))));
    assert_eq!(read_checkpoint(&p).unwrap().config, config);
}

#[test]
fn metrics_csv_has_the_fixed_header_and_round_trips() {
    let dir = tempdir().unwrap();
    let rows = vec![
        MetricsRow {
            id: "r1".into(),
            method: "zerofill".into(),
            dataset: "ds".into(),
            acc: 4.0,
            ssim: 0.5,
            psnr_db: 21.25,
            cr: Some(0.1),
            wmn: None,
            bgn: Some(0.01),
            wa: None,
            snr: Some(12.0),
            wall_ms: None,
        },
    ];
    let p = dir.path().join("m.csv");
    write_metrics_csv(&p, &rows).unwrap();
    let text = fs::read_to_string(&p).unwrap();
    assert_eq!(text.lines().next().unwrap(), METRICS_CSV_HEADER.join(","));
    assert_eq!(text.lines().nth(1).unwrap(), "r1,zerofill,ds,4.0,0.5,21.25,0.1,,0.01,,12.0,");
    assert_eq!(read_metrics_csv(&p).unwrap(), rows);

    fs::write(&p, "a,b\n1,2\n").unwrap();
    assert!(matches!(read_metrics_csv(&p), Err(Error::Header(_))));
}
