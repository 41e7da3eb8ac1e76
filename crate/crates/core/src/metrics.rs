//! Image-quality metrics on magnitude images: SSIM, PSNR, lesion contrast
//! resolution, white-matter and background noise, their cohort-relative
//! weighted average, k-space SNR and Otsu thresholding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mri_model::{ComplexImage, MultiCoilKSpace};

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const OTSU_BINS: usize = 256;
pub const WMN_BINS: usize = 256;
/// Dilation radius, in 4-connected steps, of the lesion neighbourhood.
pub const CR_DILATION: usize = 4;
/// Side of each k-space corner square relative to `min(h, w)`.
pub const SNR_CORNER_FRAC: f64 = 0.05;

fn check_dims(a: usize, b: usize, h: usize, w: usize) -> Result<()> {
    if a != h * w || b != h * w {
        return Err(Error::Shape(format!("images of {a} and {b} pixels on a {h}x{w} grid")));
    }
    Ok(())
}

fn box_sums(v: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    // integral image, then one lookup per window
    let mut ii = vec![0.0; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += v[y * w + x];
            ii[(y + 1) * (w + 1) + x + 1] = ii[y * (w + 1) + x + 1] + row;
        }
    }
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for x in 0..ow {
            let s = ii[(y + k) * (w + 1) + x + k] - ii[y * (w + 1) + x + k] - ii[(y + k) * (w + 1) + x]
                + ii[y * (w + 1) + x];
            out.push(s);
        }
    }
    out
}

/// `|x|` scaled to unit maximum (unchanged if all zero).
pub fn normalized_magnitude(x: &ComplexImage) -> Vec<f64> {
    let m = x.magnitude();
    let peak = m.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 && peak.is_finite() {
        m.iter().map(|v| v / peak).collect()
    } else {
        m
    }
}

/// Mean SSIM over every fully contained 7×7 window, with uniform weights,
/// sample (co)variances and data range `max(reference)`.
pub fn ssim(test: &[f64], reference: &[f64], h: usize, w: usize) -> Result<f64> {
    check_dims(test.len(), reference.len(), h, w)?;
    let k = SSIM_WINDOW;
    if h < k || w < k {
        return Err(Error::Shape(format!("SSIM needs at least {k}x{k} pixels, got {h}x{w}")));
    }
    let range = reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(range > 0.0) {
        return Err(Error::Degenerate("reference has no positive maximum".into()));
    }
    let n = (k * k) as f64;
    let cov_norm = n / (n - 1.0);
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>();
    let sx = box_sums(test, h, w, k);
    let sy = box_sums(reference, h, w, k);
    let sxx = box_sums(&sq(test, test), h, w, k);
    let syy = box_sums(&sq(reference, reference), h, w, k);
    let sxy = box_sums(&sq(test, reference), h, w, k);
    let mut total = 0.0;
    for i in 0..sx.len() {
        let (ux, uy) = (sx[i] / n, sy[i] / n);
        let vx = cov_norm * (sxx[i] / n - ux * ux);
        let vy = cov_norm * (syy[i] / n - uy * uy);
        let vxy = cov_norm * (sxy[i] / n - ux * uy);
        total += ((2.0 * ux * uy + c1) * (2.0 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / sx.len() as f64)
}

/// `10·log₁₀(max(ref)² / MSE)`; `+∞` for identical images.
pub fn psnr(test: &[f64], reference: &[f64], h: usize, w: usize) -> Result<f64> {
    check_dims(test.len(), reference.len(), h, w)?;
    let mse = test.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / test.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Linear-interpolation percentile (`p` in `[0, 100]`) of non-empty data.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Degenerate("percentile of no values".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = p / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Otsu split of `values` over a 256-bin histogram spanning `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Otsu {
    /// Lower edge of the first foreground bin.
    pub threshold: f64,
    /// Index of the first foreground bin.
    pub bin: usize,
    min: f64,
    width: f64,
}

impl Otsu {
    pub fn bin_of(&self, v: f64) -> usize {
        (((v - self.min) / self.width) as usize).min(OTSU_BINS - 1)
    }

    pub fn is_foreground(&self, v: f64) -> bool {
        self.bin_of(v) >= self.bin
    }
}

pub fn otsu(values: &[f64]) -> Result<Otsu> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || !(max > min) {
        return Err(Error::Degenerate("Otsu threshold of constant data".into()));
    }
    let width = (max - min) / OTSU_BINS as f64;
    let mut probe = Otsu {
        threshold: min,
        bin: 0,
        min,
        width,
    };
    let mut count = [0.0f64; OTSU_BINS];
    let mut sum = [0.0f64; OTSU_BINS];
    for &v in values {
        let b = probe.bin_of(v);
        count[b] += 1.0;
        sum[b] += v;
    }
    let (n, total) = (values.len() as f64, sum.iter().sum::<f64>());
    let (mut n0, mut s0) = (0.0, 0.0);
    let mut best = (f64::NEG_INFINITY, 1);
    for t in 1..OTSU_BINS {
        n0 += count[t - 1];
        s0 += sum[t - 1];
        let n1 = n - n0;
        if n0 == 0.0 || n1 == 0.0 {
            continue;
        }
        let (m0, m1) = (s0 / n0, (total - s0) / n1);
        let between = n0 * n1 * (m0 - m1).powi(2) / (n * n);
        if between > best.0 {
            best = (between, t);
        }
    }
    probe.bin = best.1;
    probe.threshold = min + best.1 as f64 * width;
    Ok(probe)
}

/// Threshold maximizing the between-class variance.
pub fn otsu_threshold(values: &[f64]) -> Result<f64> {
    Ok(otsu(values)?.threshold)
}

/// Dilate by `steps` 4-connected steps (a diamond of radius `steps`).
pub fn dilate(mask: &[bool], h: usize, w: usize, steps: usize) -> Vec<bool> {
    let mut cur = mask.to_vec();
    for _ in 0..steps {
        let prev = cur.clone();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if prev[i] {
                    continue;
                }
                cur[i] = (y > 0 && prev[i - w])
                    || (y + 1 < h && prev[i + w])
                    || (x > 0 && prev[i - 1])
                    || (x + 1 < w && prev[i + 1]);
            }
        }
    }
    cur
}

fn masked_mean(img: &[f64], mask: &[bool]) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for (&v, &m) in img.iter().zip(mask) {
        if m {
            s += v;
            n += 1;
        }
    }
    (n > 0).then(|| s / n as f64)
}

/// `(S_les − S_wm)/(S_les + S_wm)` with `S_wm` the mean over white matter
/// within 4 steps of the lesions.
pub fn contrast_resolution(img: &[f64], lesion: &[bool], wm: &[bool], h: usize, w: usize) -> Result<f64> {
    check_dims(img.len(), lesion.len(), h, w)?;
    check_dims(wm.len(), img.len(), h, w)?;
    let s_les = masked_mean(img, lesion).ok_or_else(|| Error::Degenerate("empty lesion mask".into()))?;
    let grown = dilate(lesion, h, w, CR_DILATION);
    let ring: Vec<bool> = grown
        .iter()
        .zip(wm)
        .zip(lesion)
        .map(|((&g, &m), &l)| g && m && !l)
        .collect();
    let s_wm =
        masked_mean(img, &ring).ok_or_else(|| Error::Degenerate("no white matter around the lesions".into()))?;
    let denom = s_les + s_wm;
    if denom == 0.0 {
        return Err(Error::Degenerate("zero lesion and white-matter signal".into()));
    }
    Ok((s_les - s_wm) / denom)
}

/// Central-difference gradient magnitude, one-sided at the borders.
pub fn gradient_magnitude(img: &[f64], h: usize, w: usize) -> Vec<f64> {
    let d = |a: f64, b: f64, span: usize| (a - b) / span as f64;
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let gx = if w < 2 {
                0.0
            } else if x == 0 {
                d(img[y * w + 1], img[y * w], 1)
            } else if x == w - 1 {
                d(img[y * w + x], img[y * w + x - 1], 1)
            } else {
                d(img[y * w + x + 1], img[y * w + x - 1], 2)
            };
            let gy = if h < 2 {
                0.0
            } else if y == 0 {
                d(img[w + x], img[x], 1)
            } else if y == h - 1 {
                d(img[y * w + x], img[(y - 1) * w + x], 1)
            } else {
                d(img[(y + 1) * w + x], img[(y - 1) * w + x], 2)
            };
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

/// Mode of the white-matter gradient magnitude of the WM-mean-normalized
/// image, from a 256-bin histogram over `[0, p99]`.
pub fn wm_noise(img: &[f64], wm: &[bool], h: usize, w: usize) -> Result<f64> {
    check_dims(img.len(), wm.len(), h, w)?;
    let mean = masked_mean(img, wm).ok_or_else(|| Error::Degenerate("empty white-matter mask".into()))?;
    if mean == 0.0 {
        return Err(Error::Degenerate("zero mean white-matter signal".into()));
    }
    let normalized: Vec<f64> = img.iter().map(|v| v / mean).collect();
    let grad = gradient_magnitude(&normalized, h, w);
    let inside: Vec<f64> = grad.iter().zip(wm).filter(|(_, &m)| m).map(|(&g, _)| g).collect();
    let top = percentile(&inside, 99.0)?;
    if top <= 0.0 {
        return Ok(0.0);
    }
    let bw = top / WMN_BINS as f64;
    let mut hist = [0usize; WMN_BINS];
    for &g in &inside {
        if g <= top {
            hist[((g / bw) as usize).min(WMN_BINS - 1)] += 1;
        }
    }
    let mode = (0..WMN_BINS).fold(0, |best, b| if hist[b] > hist[best] { b } else { best });
    Ok((mode as f64 + 0.5) * bw)
}

/// 99th percentile of the magnitude outside the Otsu tissue mask.
pub fn bg_noise(img: &[f64]) -> Result<f64> {
    let split = otsu(img)?;
    let background: Vec<f64> = img.iter().cloned().filter(|&v| !split.is_foreground(v)).collect();
    if background.is_empty() {
        return Err(Error::Degenerate("no background outside the tissue mask".into()));
    }
    percentile(&background, 99.0)
}

/// Cohort-relative `(1 − cr/max_cr) + wmn/max_wmn + bgn/max_bgn` per row;
/// lower is better.
pub fn weighted_average(rows: &[(f64, f64, f64)]) -> Result<Vec<f64>> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("weighted average of an empty cohort".into()));
    }
    let max = |f: fn(&(f64, f64, f64)) -> f64| rows.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let (mc, mw, mb) = (max(|r| r.0), max(|r| r.1), max(|r| r.2));
    if !(mc > 0.0 && mw > 0.0 && mb > 0.0) {
        return Err(Error::Degenerate(format!(
            "cohort maxima must be positive, got ({mc}, {mw}, {mb})"
        )));
    }
    Ok(rows
        .iter()
        .map(|&(c, w, b)| (1.0 - c / mc) + w / mw + b / mb)
        .collect())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean image magnitude above the Otsu threshold over the median k-space
/// magnitude in the four corner squares, averaged across coils. Only
/// non-zero (acquired) corner samples count.
pub fn snr(img: &[f64], kspace: &MultiCoilKSpace) -> Result<f64> {
    let (h, w) = (kspace.height(), kspace.width());
    check_dims(img.len(), h * w, h, w)?;
    let split = otsu(img)?;
    let fg: Vec<f64> = img.iter().cloned().filter(|&v| split.is_foreground(v)).collect();
    let signal = fg.iter().sum::<f64>() / fg.len() as f64;

    let side = ((SNR_CORNER_FRAC * h.min(w) as f64).round() as usize).max(1);
    let (mut total, mut coils) = (0.0, 0usize);
    for c in 0..kspace.n_coils() {
        let k = kspace.coil(c);
        let mut vals = Vec::new();
        for &(y0, x0) in &[(0, 0), (0, w - side), (h - side, 0), (h - side, w - side)] {
            for y in y0..y0 + side {
                for x in x0..x0 + side {
                    let m = k[y * w + x].norm();
                    if m > 0.0 {
                        vals.push(m);
                    }
                }
            }
        }
        if !vals.is_empty() {
            total += median(&mut vals);
            coils += 1;
        }
    }
    if coils == 0 || total == 0.0 {
        return Err(Error::Degenerate("no acquired samples in the k-space corners".into()));
    }
    Ok(signal / (total / coils as f64))
}

/// One row of metrics for a reconstruction. Metrics that are undefined for
/// the image (e.g. no lesions) are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ssim: f64,
    pub psnr_db: f64,
    pub cr: Option<f64>,
    pub wmn: Option<f64>,
    pub bgn: Option<f64>,
    /// Filled in once the whole cohort is known.
    pub wa: Option<f64>,
    pub snr: Option<f64>,
}

/// All per-image metrics of `test` against `reference` (both magnitudes).
pub fn report(
    test: &[f64],
    reference: &[f64],
    lesion: &[bool],
    wm: &[bool],
    kspace: &MultiCoilKSpace,
) -> Result<MetricsReport> {
    let (h, w) = (kspace.height(), kspace.width());
    Ok(MetricsReport {
        ssim: ssim(test, reference, h, w)?,
        psnr_db: psnr(test, reference, h, w)?,
        cr: contrast_resolution(test, lesion, wm, h, w).ok(),
        wmn: wm_noise(test, wm, h, w).ok(),
        bgn: bg_noise(test).ok(),
        wa: None,
        snr: snr(test, kspace).ok(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_of_known_mse() {
        let reference = vec![1.0, 0.0, 0.0, 0.0];
        let test = vec![1.0, 0.2, 0.0, 0.0];
        // MSE = 0.04 / 4 = 0.01
        assert!((psnr(&test, &reference, 2, 2).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(psnr(&reference, &reference, 2, 2).unwrap(), f64::INFINITY);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 4.0);
        assert!((percentile(&v, 50.0).unwrap() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn dilation_is_a_diamond() {
        let (h, w) = (11, 11);
        let mut m = vec![false; h * w];
        m[5 * w + 5] = true;
        let d = dilate(&m, h, w, 4);
        for y in 0..h {
            for x in 0..w {
                let l1 = (y as isize - 5).abs() + (x as isize - 5).abs();
                assert_eq!(d[y * w + x], l1 <= 4);
            }
        }
    }

    #[test]
    fn gradient_of_ramp() {
        let (h, w) = (4, 5);
        let img: Vec<f64> = (0..h * w).map(|i| (i % w) as f64 * 0.5).collect();
        for g in gradient_magnitude(&img, h, w) {
            assert!((g - 0.5).abs() < 1e-15);
        }
    }
}
