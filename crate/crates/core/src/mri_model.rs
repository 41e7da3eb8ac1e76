//! Multicoil forward model `A = P∘F∘ε` and its adjoint `A* = ρ∘F⁻¹∘Pᵀ`.

use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffmath::fft::fft2c_slices;
use crate::diffmath::tape::{expand_kernel, mask_kernel, reduce_kernel};
use crate::diffmath::CTensor;
use crate::error::{Error, Result};

/// Single coil-combined complex image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<Complex64>,
}

impl ComplexImage {
    pub fn new(height: usize, width: usize, pixels: Vec<Complex64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::Shape(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub fn from_tensor(t: CTensor) -> Result<Self> {
        let (h, w) = match t.shape() {
            [h, w] => (*h, *w),
            s => return Err(Error::Shape(format!("expected [h,w], got {s:?}"))),
        };
        Ok(Self {
            height: h,
            width: w,
            pixels: t.into_data(),
        })
    }

    pub fn to_tensor(&self) -> CTensor {
        CTensor::new(vec![self.height, self.width], self.pixels.clone()).expect("consistent dims")
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.pixels.iter().map(|v| v.norm()).collect()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.pixels.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn norm(&self) -> f64 {
        self.pixels.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|v| v * s).collect(),
        }
    }

    pub fn inner(&self, other: &ComplexImage) -> Complex64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.pixels.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// Per-coil complex sensitivity profiles, shape `[coils, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMaps {
    maps: Arc<CTensor>,
}

impl SensitivityMaps {
    pub fn new(maps: CTensor) -> Result<Self> {
        match maps.shape() {
            [c, _, _] if *c >= 1 => Ok(Self { maps: Arc::new(maps) }),
            s => Err(Error::Shape(format!("sensitivity maps must be [c>=1,h,w], got {s:?}"))),
        }
    }

    /// A single coil with unit sensitivity everywhere.
    pub fn unit(height: usize, width: usize) -> Self {
        let data = vec![Complex64::new(1.0, 0.0); height * width];
        Self::new(CTensor::new(vec![1, height, width], data).expect("dims")).expect("one coil")
    }

    pub fn n_coils(&self) -> usize {
        self.maps.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.maps.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.maps.shape()[2]
    }

    pub fn tensor(&self) -> &Arc<CTensor> {
        &self.maps
    }

    pub fn coil(&self, i: usize) -> &[Complex64] {
        let n = self.height() * self.width();
        &self.maps.data()[i * n..(i + 1) * n]
    }

    /// `Σᵢ |Sᵢ|²` at every pixel.
    pub fn sum_of_squares(&self) -> Vec<f64> {
        let n = self.height() * self.width();
        let mut out = vec![0.0; n];
        for coil in self.maps.data().chunks_exact(n) {
            for (o, s) in out.iter_mut().zip(coil) {
                *o += s.norm_sqr();
            }
        }
        out
    }

    pub fn check_image(&self, h: usize, w: usize) -> Result<()> {
        if (h, w) != (self.height(), self.width()) {
            return Err(Error::Shape(format!(
                "image {h}x{w} vs sensitivity maps {}x{}",
                self.height(),
                self.width()
            )));
        }
        Ok(())
    }
}

/// Per-coil k-space samples, shape `[coils, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiCoilKSpace {
    pub samples: CTensor,
}

impl MultiCoilKSpace {
    pub fn new(samples: CTensor) -> Result<Self> {
        match samples.shape() {
            [_, _, _] => Ok(Self { samples }),
            s => Err(Error::Shape(format!("k-space must be [c,h,w], got {s:?}"))),
        }
    }

    pub fn zeros(n_coils: usize, height: usize, width: usize) -> Self {
        Self {
            samples: CTensor::zeros(&[n_coils, height, width]),
        }
    }

    pub fn n_coils(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.samples.shape()[2]
    }

    pub fn coil(&self, i: usize) -> &[Complex64] {
        let n = self.height() * self.width();
        &self.samples.data()[i * n..(i + 1) * n]
    }
}

/// Multicoil image stack `[coils, h, w]` (output of `expand`).
pub type CoilImages = CTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Gaussian2d,
    Equidistant1d,
    Poisson2d,
    Full,
}

impl MaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskKind::Gaussian2d => "gaussian2d",
            MaskKind::Equidistant1d => "equidistant1d",
            MaskKind::Poisson2d => "poisson2d",
            MaskKind::Full => "full",
        }
    }
}

impl std::str::FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian2d" => Ok(MaskKind::Gaussian2d),
            "equidistant1d" => Ok(MaskKind::Equidistant1d),
            "poisson2d" => Ok(MaskKind::Poisson2d),
            "full" => Ok(MaskKind::Full),
            other => Err(Error::InvalidArgument(format!("unknown mask kind '{other}'"))),
        }
    }
}

/// Binary k-space selection pattern with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    height: usize,
    width: usize,
    keep: Vec<bool>,
    weights: Arc<Vec<f64>>,
    pub kind: MaskKind,
    pub requested_acceleration: f64,
    pub seed: u64,
}

impl SamplingMask {
    pub fn new(
        height: usize,
        width: usize,
        keep: Vec<bool>,
        kind: MaskKind,
        requested_acceleration: f64,
        seed: u64,
    ) -> Result<Self> {
        if keep.len() != height * width {
            return Err(Error::Shape(format!(
                "mask of {} samples for {height}x{width}",
                keep.len()
            )));
        }
        if !keep.iter().any(|&k| k) {
            return Err(Error::InvalidArgument("mask keeps no samples".into()));
        }
        let weights = Arc::new(keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect());
        Ok(Self {
            height,
            width,
            keep,
            weights,
            kind,
            requested_acceleration,
            seed,
        })
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![true; height * width], MaskKind::Full, 1.0, 0)
            .expect("non-empty")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn is_kept(&self, y: usize, x: usize) -> bool {
        self.keep[y * self.width + x]
    }

    pub fn weights(&self) -> &Arc<Vec<f64>> {
        &self.weights
    }

    pub fn kept_count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    /// `h·w / #kept`.
    pub fn achieved_acceleration(&self) -> f64 {
        (self.height * self.width) as f64 / self.kept_count() as f64
    }

    fn check_grid(&self, h: usize, w: usize) -> Result<()> {
        if (h, w) != (self.height, self.width) {
            return Err(Error::Shape(format!(
                "data {h}x{w} vs mask {}x{}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Coil `i` of the result is `Sᵢ ⊙ x`.
pub fn expand(x: &ComplexImage, maps: &SensitivityMaps) -> Result<CoilImages> {
    maps.check_image(x.height, x.width)?;
    expand_kernel(&x.to_tensor(), maps.tensor())
}

/// `Σᵢ Sᵢᴴ ⊙ xᵢ`.
pub fn reduce(stack: &CoilImages, maps: &SensitivityMaps) -> Result<ComplexImage> {
    ComplexImage::from_tensor(reduce_kernel(stack, maps.tensor())?)
}

/// `A(x)`: per coil `P ⊙ fft2c(Sᵢ ⊙ x)`.
pub fn forward_op(x: &ComplexImage, maps: &SensitivityMaps, mask: &SamplingMask) -> Result<MultiCoilKSpace> {
    mask.check_grid(x.height, x.width)?;
    let mut coils = expand(x, maps)?;
    fft2c_slices(coils.data_mut(), x.height, x.width, false);
    MultiCoilKSpace::new(mask_kernel(&coils, mask.weights())?)
}

/// `A*(y)`: `ρ(F⁻¹(Pᵀ y))`.
pub fn adjoint_op(y: &MultiCoilKSpace, maps: &SensitivityMaps, mask: &SamplingMask) -> Result<ComplexImage> {
    check_kspace(y, maps, mask)?;
    let mut coils = mask_kernel(&y.samples, mask.weights())?;
    fft2c_slices(coils.data_mut(), y.height(), y.width(), true);
    reduce(&coils, maps)
}

pub(crate) fn check_kspace(y: &MultiCoilKSpace, maps: &SensitivityMaps, mask: &SamplingMask) -> Result<()> {
    mask.check_grid(y.height(), y.width())?;
    maps.check_image(y.height(), y.width())?;
    if y.n_coils() != maps.n_coils() {
        return Err(Error::Shape(format!(
            "{} coils of k-space vs {} sensitivity maps",
            y.n_coils(),
            maps.n_coils()
        )));
    }
    Ok(())
}

/// Add i.i.d. circular complex Gaussian noise of total standard deviation
/// `sigma` (each of real and imaginary `sigma/√2`) at sampled positions.
pub fn add_noise(y: &MultiCoilKSpace, mask: &SamplingMask, sigma: f64, seed: u64) -> Result<MultiCoilKSpace> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {sigma}")));
    }
    mask.check_grid(y.height(), y.width())?;
    let mut out = y.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma / std::f64::consts::SQRT_2)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = y.height() * y.width();
    for coil in out.samples.data_mut().chunks_exact_mut(n) {
        for (v, &keep) in coil.iter_mut().zip(mask.keep()) {
            if keep {
                let re = normal.sample(&mut rng);
                let im = normal.sample(&mut rng);
                *v += Complex64::new(re, im);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::fft2c;
    use rand::Rng;

    fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> ComplexImage {
        ComplexImage::from_tensor(CTensor::randn(&[h, w], rng)).unwrap()
    }

    fn normalized_maps(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> SensitivityMaps {
        let mut raw = CTensor::randn(&[c, h, w], rng);
        let n = h * w;
        let mut ss = vec![0.0; n];
        for coil in raw.data().chunks_exact(n) {
            for (s, v) in ss.iter_mut().zip(coil) {
                *s += v.norm_sqr();
            }
        }
        for coil in raw.data_mut().chunks_exact_mut(n) {
            for (v, s) in coil.iter_mut().zip(&ss) {
                *v /= s.sqrt();
            }
        }
        SensitivityMaps::new(raw).unwrap()
    }

    fn random_mask(h: usize, w: usize, rng: &mut ChaCha8Rng) -> SamplingMask {
        let mut keep: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.4)).collect();
        keep[(h / 2) * w + w / 2] = true;
        SamplingMask::new(h, w, keep, MaskKind::Full, 2.5, 0).unwrap()
    }

    #[test]
    fn single_unit_coil_expand_reduce_pass_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_image(5, 4, &mut rng);
        let maps = SensitivityMaps::unit(5, 4);
        let stack = expand(&x, &maps).unwrap();
        assert_eq!(stack.data(), &x.pixels[..]);
        assert_eq!(reduce(&stack, &maps).unwrap(), x);
    }

    #[test]
    fn reduce_inverts_expand_for_normalized_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_image(6, 6, &mut rng);
        let maps = normalized_maps(3, 6, 6, &mut rng);
        let back = reduce(&expand(&x, &maps).unwrap(), &maps).unwrap();
        for (a, b) in back.pixels.iter().zip(&x.pixels) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn reduce_is_conjugate_linear_in_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let maps = normalized_maps(2, 4, 4, &mut rng);
        let stack = CTensor::randn(&[2, 4, 4], &mut rng);
        let theta = 0.7;
        let rot = Complex64::from_polar(1.0, theta);
        let rotated = SensitivityMaps::new(CTensor::new(
            vec![2, 4, 4],
            maps.tensor().data().iter().map(|s| s * rot).collect(),
        )
        .unwrap())
        .unwrap();
        let a = reduce(&stack, &maps).unwrap();
        let b = reduce(&stack, &rotated).unwrap();
        for (u, v) in a.pixels.iter().zip(&b.pixels) {
            assert!((u * rot.conj() - v).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_image_gives_zero_stack_and_zero_adjoint() {
        let maps = SensitivityMaps::unit(4, 4);
        let x = ComplexImage::zeros(4, 4);
        assert!(expand(&x, &maps).unwrap().data().iter().all(|v| v.norm() == 0.0));
        let y = MultiCoilKSpace::zeros(1, 4, 4);
        let back = adjoint_op(&y, &maps, &SamplingMask::full(4, 4)).unwrap();
        assert!(back.pixels.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn full_mask_unit_coil_is_fft() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_image(8, 6, &mut rng);
        let y = forward_op(&x, &SensitivityMaps::unit(8, 6), &SamplingMask::full(8, 6)).unwrap();
        let k = fft2c(&x.to_tensor()).unwrap();
        assert_eq!(y.samples.data(), k.data());
    }

    #[test]
    fn unsampled_entries_are_exact_zeros_and_masking_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_image(8, 8, &mut rng);
        let maps = normalized_maps(3, 8, 8, &mut rng);
        let mask = random_mask(8, 8, &mut rng);
        let y = forward_op(&x, &maps, &mask).unwrap();
        for c in 0..3 {
            for (v, &k) in y.coil(c).iter().zip(mask.keep()) {
                if !k {
                    assert_eq!(*v, Complex64::new(0.0, 0.0));
                }
            }
        }
        let twice = mask_kernel(&y.samples, mask.weights()).unwrap();
        assert_eq!(twice, y.samples);
    }

    #[test]
    fn adjoint_identity_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let x = random_image(8, 8, &mut rng);
            let maps = normalized_maps(3, 8, 8, &mut rng);
            let mask = random_mask(8, 8, &mut rng);
            let y = MultiCoilKSpace::new(CTensor::randn(&[3, 8, 8], &mut rng)).unwrap();
            let ax = forward_op(&x, &maps, &mask).unwrap();
            let aty = adjoint_op(&y, &maps, &mask).unwrap();
            let lhs = ax.samples.inner(&y.samples);
            let rhs = x.inner(&aty);
            assert!((lhs - rhs).norm() / (x.norm() * y.samples.norm()) < 1e-10);
        }
    }

    #[test]
    fn full_mask_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_image(8, 8, &mut rng);
        let maps = normalized_maps(4, 8, 8, &mut rng);
        let mask = SamplingMask::full(8, 8);
        let back = adjoint_op(&forward_op(&x, &maps, &mask).unwrap(), &maps, &mask).unwrap();
        for (a, b) in back.pixels.iter().zip(&x.pixels) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatches_are_shape_errors() {
        let maps = SensitivityMaps::unit(4, 4);
        let x = ComplexImage::zeros(4, 5);
        assert!(matches!(expand(&x, &maps), Err(Error::Shape(_))));
        let x = ComplexImage::zeros(4, 4);
        assert!(matches!(
            forward_op(&x, &maps, &SamplingMask::full(4, 3)),
            Err(Error::Shape(_))
        ));
        let y = MultiCoilKSpace::zeros(2, 4, 4);
        assert!(matches!(
            adjoint_op(&y, &maps, &SamplingMask::full(4, 4)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn noise_contract() {
        let mask = SamplingMask::full(4, 4);
        let y = MultiCoilKSpace::zeros(2, 4, 4);
        assert_eq!(add_noise(&y, &mask, 0.0, 1).unwrap(), y);
        assert!(add_noise(&y, &mask, -0.1, 1).is_err());
        let a = add_noise(&y, &mask, 0.3, 9).unwrap();
        let b = add_noise(&y, &mask, 0.3, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, add_noise(&y, &mask, 0.3, 10).unwrap());
    }

    #[test]
    fn noise_only_at_sampled_positions_with_expected_std() {
        let (h, w) = (320, 320);
        let mut keep = vec![false; h * w];
        for (i, k) in keep.iter_mut().enumerate() {
            *k = i % 3 != 0;
        }
        let mask = SamplingMask::new(h, w, keep, MaskKind::Full, 1.5, 0).unwrap();
        let sigma = 0.25;
        let y = add_noise(&MultiCoilKSpace::zeros(1, h, w), &mask, sigma, 42).unwrap();
        let mut sum_sq = 0.0;
        let mut n = 0usize;
        for (v, &k) in y.coil(0).iter().zip(mask.keep()) {
            if k {
                sum_sq += v.norm_sqr();
                n += 1;
            } else {
                assert_eq!(*v, Complex64::new(0.0, 0.0));
            }
        }
        assert_eq!(n, h * w - (h * w).div_ceil(3));
        let std = (sum_sq / n as f64).sqrt();
        assert!((std - sigma).abs() / sigma < 0.02, "std {std}");
    }
}
