use mrirecon::baselines::shrink;
use mrirecon::baselines::wavelet::Wavelet2d;
use mrirecon::diffmath::{conv2d, conv2d_adjoint, conv2d_dilated, fft2c, ifft2c, CTensor, Tensor};
use mrirecon::mri_model::{
    adjoint_op, expand, forward_op, reduce, ComplexImage, MaskKind, MultiCoilKSpace, SamplingMask, SensitivityMaps,
};
use mrirecon::phantom::make_coils;
use mrirecon::sampling::{acs_region, gaussian2d_mask, poisson2d_calibrated, PoissonParams};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn image(h: usize, w: usize, r: &mut ChaCha8Rng) -> ComplexImage {
    ComplexImage::from_tensor(CTensor::randn(&[h, w], r)).unwrap()
}

fn random_mask(h: usize, w: usize, r: &mut ChaCha8Rng) -> SamplingMask {
    let mut keep: Vec<bool> = (0..h * w).map(|_| r.random_bool(0.4)).collect();
    keep[0] = true;
    SamplingMask::new(h, w, keep, MaskKind::Gaussian2d, 2.5, 0).unwrap()
}

fn random_maps(coils: usize, h: usize, w: usize, r: &mut ChaCha8Rng) -> SensitivityMaps {
    SensitivityMaps::new(CTensor::randn(&[coils, h, w], r)).unwrap()
}

fn rel(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fft_is_unitary_and_linear(h in 2usize..=64, w in 2usize..=64, seed: u64) {
        let mut r = rng(seed);
        let a = CTensor::randn(&[h, w], &mut r);
        let b = CTensor::randn(&[h, w], &mut r);
        let fa = fft2c(&a).unwrap();
        prop_assert!(rel(fa.norm(), a.norm(), a.norm()) < 1e-10);
        let (alpha, beta) = (Complex64::new(0.3, -1.2), Complex64::new(-0.7, 0.4));
        let combo = CTensor::new(
            vec![h, w],
            a.data().iter().zip(b.data()).map(|(x, y)| alpha * x + beta * y).collect(),
        ).unwrap();
        let fb = fft2c(&b).unwrap();
        let lhs = fft2c(&combo).unwrap();
        let err = lhs.data().iter().zip(fa.data().iter().zip(fb.data()))
            .map(|(l, (x, y))| (l - (alpha * x + beta * y)).norm_sqr()).sum::<f64>().sqrt();
        prop_assert!(err < 1e-10 * combo.norm());
        let back = ifft2c(&fa).unwrap();
        prop_assert!(back.sub(&a).norm() < 1e-10 * a.norm());
    }

    #[test]
    fn fft_adjoint_identity(h in 2usize..=32, w in 2usize..=32, seed: u64) {
        let mut r = rng(seed);
        let a = CTensor::randn(&[h, w], &mut r);
        let b = CTensor::randn(&[h, w], &mut r);
        let lhs = fft2c(&a).unwrap().inner(&b);
        let rhs = a.inner(&ifft2c(&b).unwrap());
        prop_assert!((lhs - rhs).norm() < 1e-8 * a.norm() * b.norm());
    }

    #[test]
    fn conv_adjoint_identity(
        c_in in 1usize..4, c_out in 1usize..4, k in prop::sample::select(vec![1usize, 3, 5]),
        dilation in 1usize..3, h in 3usize..12, w in 3usize..12, seed: u64,
    ) {
        let mut r = rng(seed);
        let x = Tensor::randn(&[c_in, h, w], &mut r);
        let kernel = Tensor::randn(&[c_out, c_in, k, k], &mut r);
        let y = Tensor::randn(&[c_out, h, w], &mut r);
        let zero = Tensor::zeros(&[c_out]);
        let ax = conv2d_dilated(&x, &kernel, &zero, dilation).unwrap();
        let aty = conv2d_adjoint(&y, &kernel, dilation).unwrap();
        prop_assert!((ax.dot(&y) - x.dot(&aty)).abs() < 1e-8 * x.norm() * y.norm() * kernel.norm());
        if dilation == 1 {
            prop_assert_eq!(conv2d(&x, &kernel, &zero).unwrap(), ax);
        }
    }

    #[test]
    fn sense_operator_adjointness_and_linearity(
        h in 8usize..=32, w in 8usize..=32, coils in 1usize..=4, seed: u64,
    ) {
        let mut r = rng(seed);
        let maps = random_maps(coils, h, w, &mut r);
        let mask = random_mask(h, w, &mut r);
        let x = image(h, w, &mut r);
        let x2 = image(h, w, &mut r);
        let y = MultiCoilKSpace::new(CTensor::randn(&[coils, h, w], &mut r)).unwrap();
        let ax = forward_op(&x, &maps, &mask).unwrap();
        let aty = adjoint_op(&y, &maps, &mask).unwrap();
        let lhs = ax.samples.inner(&y.samples);
        let rhs = x.inner(&aty);
        prop_assert!((lhs - rhs).norm() / (x.norm() * y.samples.norm()) < 1e-10);

        let alpha = Complex64::new(0.5, 2.0);
        let sum = ComplexImage::new(h, w, x.pixels.iter().zip(&x2.pixels).map(|(a, b)| a + alpha * b).collect()).unwrap();
        let a_sum = forward_op(&sum, &maps, &mask).unwrap();
        let a2 = forward_op(&x2, &maps, &mask).unwrap();
        let err = a_sum.samples.data().iter().zip(ax.samples.data().iter().zip(a2.samples.data()))
            .map(|(s, (p, q))| (s - (p + alpha * q)).norm_sqr()).sum::<f64>().sqrt();
        prop_assert!(err < 1e-10 * a_sum.samples.norm().max(1.0));
    }

    #[test]
    fn masking_is_idempotent(h in 4usize..=24, w in 4usize..=24, seed: u64) {
        let mut r = rng(seed);
        let maps = random_maps(2, h, w, &mut r);
        let mask = random_mask(h, w, &mut r);
        let y = forward_op(&image(h, w, &mut r), &maps, &mask).unwrap();
        // re-applying P to already masked data changes nothing
        let n = h * w;
        for (i, v) in y.samples.data().iter().enumerate() {
            if !mask.keep()[i % n] {
                prop_assert_eq!(*v, Complex64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn reduce_inverts_expand_for_normalized_coils(h in 4usize..=40, w in 4usize..=40, coils in 1usize..=6, seed: u64) {
        let mut r = rng(seed);
        let maps = make_coils(coils, h, w, 0.8).unwrap();
        let x = image(h, w, &mut r);
        let back = reduce(&expand(&x, &maps).unwrap(), &maps).unwrap();
        let err = back.pixels.iter().zip(&x.pixels).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        prop_assert!(err < 1e-10 * x.norm());
    }

    #[test]
    fn wavelet_is_orthogonal(levels in 1usize..=3, hm in 1usize..=4, wm in 1usize..=4, seed: u64) {
        let unit = 1usize << levels;
        let (h, w) = (hm * unit.max(4), wm * unit.max(4));
        let wt = Wavelet2d::new(h, w, levels).unwrap();
        let mut r = rng(seed);
        let x: Vec<f64> = (0..h * w).map(|_| r.random::<f64>() - 0.5).collect();
        let c = wt.forward(&x).unwrap();
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        prop_assert!(rel(norm(&c), norm(&x), norm(&x)) < 1e-10);
        let back = wt.inverse(&c).unwrap();
        let err = back.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(err < 1e-10 * norm(&x));
    }

    #[test]
    fn soft_threshold_shrinks_toward_zero(v in -10.0f64..10.0, t in 0.0f64..5.0) {
        let s = shrink(v, t);
        prop_assert!(s.abs() <= v.abs());
        prop_assert!(s == 0.0 || s.signum() == v.signum());
        prop_assert!((s.abs() - (v.abs() - t).max(0.0)).abs() < 1e-12);
        prop_assert_eq!(shrink(v, 0.0), v);
    }

    #[test]
    fn gaussian_masks_hit_the_budget_and_keep_the_center(
        h in 16usize..=96, w in 16usize..=96, acc in 2.0f64..12.0, seed: u64,
    ) {
        let mask = gaussian2d_mask(h, w, acc, 0.7, 0.02, seed).unwrap();
        prop_assert_eq!(mask.kept_count(), ((h * w) as f64 / acc).round() as usize);
        for (k, a) in mask.keep().iter().zip(acs_region(h, w, 0.02)) {
            prop_assert!(!a || *k);
        }
        prop_assert_eq!(&gaussian2d_mask(h, w, acc, 0.7, 0.02, seed).unwrap(), &mask);
    }
}

/// Largest eigenvalue of `A*A` by power iteration.
fn operator_norm_sq(maps: &SensitivityMaps, mask: &SamplingMask, seed: u64) -> f64 {
    let (h, w) = (maps.height(), maps.width());
    let mut x = image(h, w, &mut rng(seed));
    let mut lambda = 0.0;
    for _ in 0..200 {
        x = x.scale(1.0 / x.norm());
        let y = adjoint_op(&forward_op(&x, maps, mask).unwrap(), maps, mask).unwrap();
        lambda = x.inner(&y).re;
        x = y;
    }
    lambda
}

#[test]
fn sense_operator_norm_is_at_most_one() {
    let mut r = rng(3);
    for (coils, h, w) in [(1, 16, 16), (4, 24, 20), (8, 32, 32)] {
        let maps = make_coils(coils, h, w, 0.8).unwrap();
        let mask = random_mask(h, w, &mut r);
        let n2 = operator_norm_sq(&maps, &mask, coils as u64);
        assert!(n2.sqrt() <= 1.0 + 1e-6, "‖A‖ = {}", n2.sqrt());
    }
}

#[test]
fn poisson_disc_points_respect_their_radius() {
    let pm = poisson2d_calibrated(64, 64, PoissonParams { acceleration: 4.0, ..PoissonParams::default() }, 5).unwrap();
    let (h, w) = (64, 64);
    let acs = acs_region(h, w, pm.params.acs_frac);
    let pts: Vec<(usize, usize)> = (0..h * w)
        .filter(|&i| pm.mask.keep()[i] && !acs[i])
        .map(|i| (i / w, i % w))
        .collect();
    for (a, &(y1, x1)) in pts.iter().enumerate() {
        for &(y2, x2) in &pts[a + 1..] {
            let d = (((y1 as f64 - y2 as f64).powi(2)) + (x1 as f64 - x2 as f64).powi(2)).sqrt();
            let r = pm.radius(y1, x1).max(pm.radius(y2, x2));
            assert!(d >= r - 1e-9, "({y1},{x1}) and ({y2},{x2}) at {d} < {r}");
        }
    }
    let again = poisson2d_calibrated(64, 64, pm.params, 5).unwrap();
    assert_eq!(again.mask, pm.mask);
}
