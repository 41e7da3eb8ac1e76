//! Cartesian undersampling masks.
//!
//! All generators are seeded and draw only integers from the RNG, so a
//! given (parameters, seed) pair yields the same mask on every platform.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mri_model::{MaskKind, SamplingMask};

/// Squared normalized elliptical radius `(2dy/h)² + (2dx/w)²` of grid point
/// `(y, x)` relative to the k-space center `(h/2, w/2)`.
pub fn normalized_radius_sq(y: usize, x: usize, h: usize, w: usize) -> f64 {
    let dy = 2.0 * (y as f64 - (h / 2) as f64) / h as f64;
    let dx = 2.0 * (x as f64 - (w / 2) as f64) / w as f64;
    dy * dy + dx * dx
}

/// Points inside the central ellipse with half-axes `acs_frac·dim/2`.
pub fn acs_region(h: usize, w: usize, acs_frac: f64) -> Vec<bool> {
    let r2 = acs_frac * acs_frac;
    (0..h * w)
        .map(|i| acs_frac > 0.0 && normalized_radius_sq(i / w, i % w, h, w) <= r2)
        .collect()
}

/// Fenwick tree over integer weights, for sampling without replacement.
struct WeightTree {
    tree: Vec<u64>,
    total: u64,
}

impl WeightTree {
    fn new(weights: &[u64]) -> Self {
        let n = weights.len();
        let mut tree = vec![0u64; n + 1];
        for (i, &w) in weights.iter().enumerate() {
            let mut j = i + 1;
            while j <= n {
                tree[j] += w;
                j += j & j.wrapping_neg();
            }
        }
        Self {
            tree,
            total: weights.iter().sum(),
        }
    }

    fn remove(&mut self, i: usize, w: u64) {
        let n = self.tree.len() - 1;
        let mut j = i + 1;
        while j <= n {
            self.tree[j] -= w;
            j += j & j.wrapping_neg();
        }
        self.total -= w;
    }

    /// Smallest index whose inclusive prefix sum exceeds `r`.
    fn find(&self, mut r: u64) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= r {
                pos = next;
                r -= self.tree[next];
            }
            step >>= 1;
        }
        pos
    }
}

/// Gaussian-density 2D random mask with an exact sample budget
/// `round(h·w/acceleration)` and a fully sampled central ellipse.
pub fn gaussian2d_mask(
    h: usize,
    w: usize,
    acceleration: f64,
    fwhm_rel: f64,
    acs_frac: f64,
    seed: u64,
) -> Result<SamplingMask> {
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    if !(acceleration > 1.0) {
        return Err(Error::InvalidArgument(format!("acceleration must exceed 1, got {acceleration}")));
    }
    if !(fwhm_rel > 0.0 && fwhm_rel <= 2.0) {
        return Err(Error::InvalidArgument(format!("fwhm_rel must be in (0, 2], got {fwhm_rel}")));
    }
    if !(0.0..1.0).contains(&acs_frac) {
        return Err(Error::InvalidArgument(format!("acs_frac must be in [0, 1), got {acs_frac}")));
    }
    let budget = ((h * w) as f64 / acceleration).round() as usize;
    let mut keep = acs_region(h, w, acs_frac);
    let acs = keep.iter().filter(|&&k| k).count();
    if acs > budget {
        return Err(Error::InvalidArgument(format!(
            "calibration ellipse holds {acs} samples, more than the budget of {budget}"
        )));
    }

    let fwhm_to_sigma = 1.0 / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
    let (sy, sx) = (fwhm_rel * h as f64 * fwhm_to_sigma, fwhm_rel * w as f64 * fwhm_to_sigma);
    let (cy, cx) = ((h / 2) as f64, (w / 2) as f64);
    let scale = (1u64 << 40) as f64;
    let weights: Vec<u64> = (0..h * w)
        .map(|i| {
            if keep[i] {
                return 0;
            }
            let dy = (i / w) as f64 - cy;
            let dx = (i % w) as f64 - cx;
            let pdf = (-0.5 * (dy * dy / (sy * sy) + dx * dx / (sx * sx))).exp();
            (pdf * scale) as u64 + 1
        })
        .collect();

    let mut tree = WeightTree::new(&weights);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in acs..budget {
        let r = rng.random_range(0..tree.total);
        let i = tree.find(r);
        keep[i] = true;
        tree.remove(i, weights[i]);
    }
    SamplingMask::new(h, w, keep, MaskKind::Gaussian2d, acceleration, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OffsetPolicy {
    Fixed,
    Random,
}

/// Equispaced phase-encode lines (columns) every `acceleration` steps plus a
/// fully kept central band of `round(center_frac·w)` lines.
pub fn equidistant1d_mask(
    h: usize,
    w: usize,
    acceleration: f64,
    center_frac: f64,
    offset: OffsetPolicy,
    seed: u64,
) -> Result<SamplingMask> {
    if acceleration.fract() != 0.0 || acceleration < 2.0 {
        return Err(Error::InvalidArgument(format!(
            "equidistant acceleration must be an integer >= 2, got {acceleration}"
        )));
    }
    if !(0.0..1.0).contains(&center_frac) {
        return Err(Error::InvalidArgument(format!("center_frac must be in [0, 1), got {center_frac}")));
    }
    let step = acceleration as usize;
    let start = match offset {
        OffsetPolicy::Fixed => 0,
        OffsetPolicy::Random => ChaCha8Rng::seed_from_u64(seed).random_range(0..step),
    };
    let band = (center_frac * w as f64).round() as usize;
    let band_start = (w / 2).saturating_sub(band / 2);
    let columns: Vec<bool> = (0..w)
        .map(|x| (x >= band_start && x < band_start + band) || x % step == start)
        .collect();
    let keep = (0..h * w).map(|i| columns[i % w]).collect();
    SamplingMask::new(h, w, keep, MaskKind::Equidistant1d, acceleration, seed)
}

/// Parameters of the variable-density Poisson-disc generator. The exclusion
/// radius at a point is `scale·(1 + slope·ρ)` pixels with `ρ` the normalized
/// elliptical distance from the k-space center; `scale` is calibrated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonParams {
    pub acceleration: f64,
    pub acs_frac: f64,
    pub slope: f64,
    /// Relative tolerance on the achieved acceleration.
    pub tolerance: f64,
}

impl Default for PoissonParams {
    fn default() -> Self {
        Self {
            acceleration: 7.5,
            acs_frac: 0.02,
            slope: 2.0,
            tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PoissonMask {
    pub mask: SamplingMask,
    pub scale: f64,
    pub params: PoissonParams,
}

impl PoissonMask {
    pub fn radius(&self, y: usize, x: usize) -> f64 {
        poisson_radius(&self.params, self.scale, y, x, self.mask.height(), self.mask.width())
    }
}

pub fn poisson_radius(params: &PoissonParams, scale: f64, y: usize, x: usize, h: usize, w: usize) -> f64 {
    scale * (1.0 + params.slope * normalized_radius_sq(y, x, h, w).sqrt())
}

fn poisson_trial(params: &PoissonParams, scale: f64, h: usize, w: usize, order: &[usize], acs: &[bool]) -> Vec<bool> {
    let radii: Vec<f64> = (0..h * w)
        .map(|i| poisson_radius(params, scale, i / w, i % w, h, w))
        .collect();
    let max_r = radii.iter().cloned().fold(0.0, f64::max);
    let reach = max_r.ceil() as isize;
    let mut disc = vec![false; h * w];
    for &i in order {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        let rp = radii[i];
        let mut ok = true;
        'scan: for ny in (y - reach).max(0)..=(y + reach).min(h as isize - 1) {
            for nx in (x - reach).max(0)..=(x + reach).min(w as isize - 1) {
                let j = ny as usize * w + nx as usize;
                if !disc[j] {
                    continue;
                }
                let d2 = ((ny - y) * (ny - y) + (nx - x) * (nx - x)) as f64;
                let r = rp.max(radii[j]);
                if d2 < r * r {
                    ok = false;
                    break 'scan;
                }
            }
        }
        if ok {
            disc[i] = true;
        }
    }
    disc.iter().zip(acs).map(|(&d, &a)| d || a).collect()
}

/// Variable-density Poisson-disc mask with a fully sampled central ellipse,
/// calibrated by bisection on the radius scale.
pub fn poisson2d_calibrated(h: usize, w: usize, params: PoissonParams, seed: u64) -> Result<PoissonMask> {
    if !(params.acceleration > 1.0) {
        return Err(Error::InvalidArgument(format!(
            "acceleration must exceed 1, got {}",
            params.acceleration
        )));
    }
    if !(params.slope >= 0.0) || !(0.0..1.0).contains(&params.acs_frac) {
        return Err(Error::InvalidArgument("invalid Poisson-disc parameters".into()));
    }
    let acs = acs_region(h, w, params.acs_frac);
    let mut order: Vec<usize> = (0..h * w).filter(|&i| !acs[i]).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let target = params.acceleration;
    let accel = |keep: &[bool]| (h * w) as f64 / keep.iter().filter(|&&k| k).count().max(1) as f64;
    let within = |a: f64| (a - target).abs() <= params.tolerance * target;

    const MAX_STEPS: usize = 50;
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut bracketed = false;
    for _ in 0..MAX_STEPS {
        let keep = poisson_trial(&params, hi, h, w, &order, &acs);
        let a = accel(&keep);
        if within(a) {
            return finish(h, w, keep, hi, params, seed);
        }
        if a > target {
            bracketed = true;
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    if !bracketed {
        return Err(Error::Calibration(format!(
            "could not bracket acceleration {target} within {MAX_STEPS} steps"
        )));
    }
    for _ in 0..MAX_STEPS {
        let mid = 0.5 * (lo + hi);
        let keep = poisson_trial(&params, mid, h, w, &order, &acs);
        let a = accel(&keep);
        if within(a) {
            return finish(h, w, keep, mid, params, seed);
        }
        if a > target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(Error::Calibration(format!(
        "acceleration {target} not reached within {MAX_STEPS} bisection steps"
    )))
}

fn finish(h: usize, w: usize, keep: Vec<bool>, scale: f64, params: PoissonParams, seed: u64) -> Result<PoissonMask> {
    Ok(PoissonMask {
        mask: SamplingMask::new(h, w, keep, MaskKind::Poisson2d, params.acceleration, seed)?,
        scale,
        params,
    })
}

pub fn poisson2d_mask(h: usize, w: usize, acceleration: f64, acs_frac: f64, seed: u64) -> Result<SamplingMask> {
    let params = PoissonParams {
        acceleration,
        acs_frac,
        ..PoissonParams::default()
    };
    Ok(poisson2d_calibrated(h, w, params, seed)?.mask)
}

/// A mask generator with its parameters, minus grid size and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub acceleration: f64,
    /// Gaussian FWHM relative to each k-space dimension.
    pub fwhm_rel: f64,
    /// Half-axes of the fully sampled central ellipse, relative to each
    /// half-dimension (Gaussian and Poisson-disc).
    pub acs_frac: f64,
    /// Fraction of fully sampled central lines (equidistant).
    pub center_frac: f64,
    pub offset: OffsetPolicy,
}

impl MaskSpec {
    pub fn new(kind: MaskKind, acceleration: f64) -> Self {
        Self {
            kind,
            acceleration,
            fwhm_rel: 0.7,
            acs_frac: 0.02,
            center_frac: 0.08,
            offset: OffsetPolicy::Fixed,
        }
    }

    pub fn generate(&self, h: usize, w: usize, seed: u64) -> Result<SamplingMask> {
        match self.kind {
            MaskKind::Gaussian2d => gaussian2d_mask(h, w, self.acceleration, self.fwhm_rel, self.acs_frac, seed),
            MaskKind::Equidistant1d => {
                equidistant1d_mask(h, w, self.acceleration, self.center_frac, self.offset, seed)
            }
            MaskKind::Poisson2d => poisson2d_mask(h, w, self.acceleration, self.acs_frac, seed),
            MaskKind::Full => Ok(SamplingMask::full(h, w)),
        }
    }
}

/// Summary statistics of a mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskReport {
    pub kind: MaskKind,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub requested_acceleration: f64,
    pub achieved_acceleration: f64,
    pub kept: usize,
    /// Length of the contiguous kept run through the k-space center, per axis.
    pub acs_rows: usize,
    pub acs_cols: usize,
    /// Fraction of kept samples in each row (length `height`).
    pub row_density: Vec<f64>,
    /// Fraction of kept samples in each column (length `width`).
    pub col_density: Vec<f64>,
}

pub const MASK_REPORT_HEADER: &str =
    "kind,height,width,seed,requested_acc,achieved_acc,kept,acs_rows,acs_cols,row_density,col_density";

fn centered_run(len: usize, kept: impl Fn(usize) -> bool) -> usize {
    let c = len / 2;
    if !kept(c) {
        return 0;
    }
    let mut lo = c;
    while lo > 0 && kept(lo - 1) {
        lo -= 1;
    }
    let mut hi = c;
    while hi + 1 < len && kept(hi + 1) {
        hi += 1;
    }
    hi - lo + 1
}

pub fn mask_report(mask: &SamplingMask) -> MaskReport {
    let (h, w) = (mask.height(), mask.width());
    let row_density = (0..h)
        .map(|y| (0..w).filter(|&x| mask.is_kept(y, x)).count() as f64 / w as f64)
        .collect();
    let col_density = (0..w)
        .map(|x| (0..h).filter(|&y| mask.is_kept(y, x)).count() as f64 / h as f64)
        .collect();
    MaskReport {
        kind: mask.kind,
        height: h,
        width: w,
        seed: mask.seed,
        requested_acceleration: mask.requested_acceleration,
        achieved_acceleration: mask.achieved_acceleration(),
        kept: mask.kept_count(),
        acs_rows: centered_run(h, |y| mask.is_kept(y, w / 2)),
        acs_cols: centered_run(w, |x| mask.is_kept(h / 2, x)),
        row_density,
        col_density,
    }
}

impl MaskReport {
    /// One CSV row matching [`MASK_REPORT_HEADER`]; densities are
    /// `;`-separated inside their field.
    pub fn to_csv_row(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|d| format!("{d:.6}")).collect::<Vec<_>>().join(";");
        format!(
            "{},{},{},{},{:.6},{:.6},{},{},{},{},{}",
            self.kind.as_str(),
            self.height,
            self.width,
            self.seed,
            self.requested_acceleration,
            self.achieved_acceleration,
            self.kept,
            self.acs_rows,
            self.acs_cols,
            join(&self.row_density),
            join(&self.col_density)
        )
    }
}
