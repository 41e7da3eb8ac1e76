//! Synthetic brain-like phantoms, analytic coil sensitivities and simulated
//! acquisitions.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::CTensor;
use crate::error::{Error, Result};
use crate::mri_model::{add_noise, forward_op, ComplexImage, MultiCoilKSpace, SamplingMask, SensitivityMaps};
use crate::sampling::MaskSpec;

/// Ellipse in normalized coordinates: the field of view spans `[-1, 1]` on
/// both axes, `x` to the right and `y` downwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    /// Half-axes `[ax, ay]` before rotation.
    pub axes: [f64; 2],
    /// Rotation in radians.
    pub angle: f64,
    pub intensity: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.axes[0];
        let v = (-dx * s + dy * c) / self.axes[1];
        u * u + v * v <= 1.0
    }

    /// Half-extent of the axis-aligned bounding box.
    pub fn half_extent(&self) -> [f64; 2] {
        let (s, c) = self.angle.sin_cos();
        let [a, b] = self.axes;
        [(a * a * c * c + b * b * s * s).sqrt(), (a * a * s * s + b * b * c * c).sqrt()]
    }

    fn in_fov(&self) -> bool {
        let e = self.half_extent();
        self.center[0].abs() + e[0] <= 1.0 && self.center[1].abs() + e[1] <= 1.0
    }

    fn boundary_points(&self, n: usize) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (s, c) = self.angle.sin_cos();
        (0..n).map(move |i| {
            let t = std::f64::consts::TAU * i as f64 / n as f64;
            let (u, v) = (self.axes[0] * t.cos(), self.axes[1] * t.sin());
            (self.center[0] + u * c - v * s, self.center[1] + u * s + v * c)
        })
    }
}

/// `φ(x, y) = c₀ + c₁x + c₂y + c₃x² + c₄xy + c₅y²` in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseModel {
    pub coeffs: [f64; 6],
}

impl PhaseModel {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let c = &self.coeffs;
        c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y
    }
}

/// A complete phantom description. Ellipses are painted in order, each
/// overwriting the magnitude inside it; lesions then add their intensity
/// on top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub ellipses: Vec<Ellipse>,
    pub lesions: Vec<Ellipse>,
    /// Index of the white-matter ellipse in `ellipses`.
    pub wm_host: Option<usize>,
    pub phase: PhaseModel,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: ComplexImage,
    pub lesion_mask: Vec<bool>,
    pub wm_mask: Vec<bool>,
}

/// Normalized coordinates of pixel centers along one axis.
fn axis_coords(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 + 0.5) / n as f64 * 2.0 - 1.0).collect()
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    let (h, w) = (spec.height, spec.width);
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("phantom grid must be non-empty".into()));
    }
    for (i, e) in spec.ellipses.iter().chain(&spec.lesions).enumerate() {
        if !e.in_fov() {
            return Err(Error::InvalidArgument(format!("ellipse {i} extends outside the field of view")));
        }
        if !(e.axes[0] > 0.0 && e.axes[1] > 0.0) {
            return Err(Error::InvalidArgument(format!("ellipse {i} has non-positive axes")));
        }
    }
    if let Some(host) = spec.wm_host {
        if host >= spec.ellipses.len() {
            return Err(Error::InvalidArgument(format!("white-matter host {host} out of range")));
        }
    }
    let (xs, ys) = (axis_coords(w), axis_coords(h));
    let n = h * w;
    let mut mag = vec![0.0; n];
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut lesion_mask = vec![false; n];
    let mut pixels = Vec::with_capacity(n);
    for (yi, &y) in ys.iter().enumerate() {
        for (xi, &x) in xs.iter().enumerate() {
            let i = yi * w + xi;
            for (k, e) in spec.ellipses.iter().enumerate() {
                if e.contains(x, y) {
                    mag[i] = e.intensity;
                    owner[i] = Some(k);
                }
            }
            for l in &spec.lesions {
                if l.contains(x, y) {
                    mag[i] += l.intensity;
                    lesion_mask[i] = true;
                }
            }
            pixels.push(Complex64::from_polar(mag[i], spec.phase.eval(x, y)));
        }
    }
    let wm_mask = match spec.wm_host {
        Some(host) => owner
            .iter()
            .zip(&lesion_mask)
            .map(|(&o, &les)| o == Some(host) && !les)
            .collect(),
        None => vec![false; n],
    };
    Ok(Phantom {
        image: ComplexImage::new(h, w, pixels)?,
        lesion_mask,
        wm_mask,
    })
}

/// Distribution of brain-like phantoms; [`PhantomFamily::sample`] draws one
/// spec per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomFamily {
    pub height: usize,
    pub width: usize,
    /// Relative perturbation of ellipse centers, axes and angles.
    pub jitter: f64,
    pub max_lesions: usize,
    pub lesion_delta: f64,
    /// Standard deviation of the phase polynomial coefficients.
    pub phase_scale: f64,
}

impl Default for PhantomFamily {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            jitter: 0.05,
            max_lesions: 4,
            lesion_delta: 0.2,
            phase_scale: 0.5,
        }
    }
}

const WM_INTENSITY: f64 = 0.4;

/// (center, axes, angle, intensity) of the template; index 3 is white matter.
const TEMPLATE: [([f64; 2], [f64; 2], f64, f64); 9] = [
    ([0.0, 0.0], [0.69, 0.92], 0.0, 0.9),
    ([0.0, -0.02], [0.65, 0.87], 0.0, 0.1),
    ([0.0, -0.02], [0.62, 0.84], 0.0, 0.6),
    ([0.0, 0.0], [0.50, 0.70], 0.0, WM_INTENSITY),
    ([-0.13, -0.10], [0.07, 0.24], 0.30, 0.15),
    ([0.13, -0.10], [0.07, 0.24], -0.30, 0.15),
    ([-0.25, 0.30], [0.08, 0.10], 0.0, 0.55),
    ([0.25, 0.30], [0.08, 0.10], 0.0, 0.55),
    ([0.0, 0.50], [0.05, 0.05], 0.0, 0.2),
];

impl PhantomFamily {
    pub fn sample(&self, seed: u64) -> PhantomSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = self.jitter;
        let jit = |rng: &mut ChaCha8Rng, scale: f64| {
            if j > 0.0 {
                rng.random_range(-j..j) * scale
            } else {
                0.0
            }
        };
        let mut ellipses = Vec::with_capacity(TEMPLATE.len());
        // one global scale keeps the nested structures nested
        let global = 1.0 + jit(&mut rng, 0.5);
        for &(c, a, angle, intensity) in &TEMPLATE {
            let scale = global * (1.0 + jit(&mut rng, 0.3));
            let mut e = Ellipse {
                center: [c[0] * global + jit(&mut rng, 0.2), c[1] * global + jit(&mut rng, 0.2)],
                axes: [a[0] * scale, a[1] * scale],
                angle: angle + jit(&mut rng, 1.0),
                intensity,
            };
            if ellipses.is_empty() {
                // the outer ring stays centered and unjittered in shape
                e.center = [0.0, 0.0];
                e.axes = [a[0] * global.min(1.0), a[1] * global.min(1.0)];
                e.angle = 0.0;
            }
            ellipses.push(e);
        }
        // nested shells share the outer ring's geometry exactly
        for k in 1..3 {
            let ratio = [TEMPLATE[k].1[0] / TEMPLATE[0].1[0], TEMPLATE[k].1[1] / TEMPLATE[0].1[1]];
            let outer = ellipses[0];
            ellipses[k].center = [outer.center[0], outer.center[1] + TEMPLATE[k].0[1]];
            ellipses[k].axes = [outer.axes[0] * ratio[0], outer.axes[1] * ratio[1]];
            ellipses[k].angle = 0.0;
        }

        let host = ellipses[3];
        let obstacles: Vec<Ellipse> = ellipses[4..].to_vec();
        let n_lesions = if self.max_lesions == 0 {
            0
        } else {
            rng.random_range(1..=self.max_lesions)
        };
        let mut lesions = Vec::with_capacity(n_lesions);
        let mut attempts = 0;
        while lesions.len() < n_lesions && attempts < 200 {
            attempts += 1;
            let cand = Ellipse {
                center: [
                    host.center[0] + rng.random_range(-0.8..0.8) * host.axes[0],
                    host.center[1] + rng.random_range(-0.8..0.8) * host.axes[1],
                ],
                axes: [rng.random_range(0.04..0.08), rng.random_range(0.04..0.08)],
                angle: rng.random_range(0.0..std::f64::consts::PI),
                intensity: self.lesion_delta,
            };
            let grown = Ellipse {
                axes: [cand.axes[0] + 0.08, cand.axes[1] + 0.08],
                ..cand
            };
            let clear = grown.boundary_points(24).all(|(x, y)| host.contains(x, y))
                && obstacles.iter().chain(&lesions).all(|o| {
                    !o.contains(cand.center[0], cand.center[1])
                        && !grown.boundary_points(24).any(|(x, y)| o.contains(x, y))
                        && !o.boundary_points(24).any(|(x, y)| grown.contains(x, y))
                });
            if clear {
                lesions.push(cand);
            }
        }
        let mut phase = PhaseModel::default();
        if self.phase_scale > 0.0 {
            for c in phase.coeffs.iter_mut() {
                *c = rng.random_range(-1.0..1.0) * self.phase_scale;
            }
        }
        PhantomSpec {
            height: self.height,
            width: self.width,
            ellipses,
            lesions,
            wm_host: Some(3),
            phase,
            seed,
        }
    }
}

/// Gaussian-profile receive coils at equal angles on the unit circle around
/// the field of view, each with a linear phase ramp and a constant offset,
/// normalized so `Σᵢ |Sᵢ|² = 1` at every pixel. One coil gives a constant
/// unit map.
pub fn make_coils(n_coils: usize, h: usize, w: usize, profile_width: f64) -> Result<SensitivityMaps> {
    if n_coils == 0 {
        return Err(Error::InvalidArgument("at least one coil is required".into()));
    }
    if !(profile_width > 0.0) {
        return Err(Error::InvalidArgument(format!("profile width must be positive, got {profile_width}")));
    }
    if n_coils == 1 {
        return Ok(SensitivityMaps::unit(h, w));
    }
    let (xs, ys) = (axis_coords(w), axis_coords(h));
    let n = h * w;
    let mut data = Vec::with_capacity(n_coils * n);
    for c in 0..n_coils {
        let theta = std::f64::consts::TAU * c as f64 / n_coils as f64;
        let (cy, cx) = theta.sin_cos();
        for &y in &ys {
            for &x in &xs {
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                let g = (-d2 / (2.0 * profile_width * profile_width)).exp();
                let phi = COIL_PHASE_SLOPE * (x * cx + y * cy) + theta;
                data.push(Complex64::from_polar(g, phi));
            }
        }
    }
    for i in 0..n {
        let norm = (0..n_coils).map(|c| data[c * n + i].norm_sqr()).sum::<f64>().sqrt();
        for c in 0..n_coils {
            data[c * n + i] /= norm;
        }
    }
    SensitivityMaps::new(CTensor::new(vec![n_coils, h, w], data)?)
}

/// Phase ramp of each coil along its own direction, radians per unit of
/// normalized distance.
pub const COIL_PHASE_SLOPE: f64 = std::f64::consts::FRAC_PI_4;

/// Upper bound on `|∇Sᵢ|` in normalized coordinates for coils built by
/// [`make_coils`] (coil centers at radius 1, so at most 2 apart).
pub fn coil_gradient_bound(profile_width: f64) -> f64 {
    2.0 / (profile_width * profile_width) + COIL_PHASE_SLOPE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub id: String,
    pub seed: u64,
    pub acceleration: f64,
    pub sigma: f64,
}

/// One simulated acquisition with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    /// Fully sampled reference, normalized to unit maximum magnitude.
    pub reference: ComplexImage,
    pub maps: SensitivityMaps,
    pub mask: SamplingMask,
    pub kspace: MultiCoilKSpace,
    pub lesion_mask: Vec<bool>,
    pub wm_mask: Vec<bool>,
    pub meta: RecordMeta,
}

/// Normalize the phantom to unit maximum magnitude, then acquire
/// `y = P⊙F(S x) + noise` with noise at sampled positions only.
pub fn simulate_acquisition(
    phantom: &Phantom,
    maps: &SensitivityMaps,
    mask: &SamplingMask,
    sigma: f64,
    seed: u64,
) -> Result<DatasetRecord> {
    let peak = phantom.image.max_magnitude();
    let reference = if peak > 0.0 {
        phantom.image.scale(1.0 / peak)
    } else {
        phantom.image.clone()
    };
    let clean = forward_op(&reference, maps, mask)?;
    let kspace = add_noise(&clean, mask, sigma, seed)?;
    Ok(DatasetRecord {
        reference,
        maps: maps.clone(),
        mask: mask.clone(),
        kspace,
        lesion_mask: phantom.lesion_mask.clone(),
        wm_mask: phantom.wm_mask.clone(),
        meta: RecordMeta {
            id: format!("{seed}"),
            seed,
            acceleration: mask.requested_acceleration,
            sigma,
        },
    })
}

/// How a dataset of records is acquired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    pub coils: usize,
    pub profile_width: f64,
    pub sigma: f64,
    pub mask: MaskSpec,
    /// Draw a fresh mask per record (seeded by the record) instead of one
    /// shared mask.
    pub mask_per_record: bool,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            coils: 4,
            profile_width: 0.8,
            sigma: 0.02,
            mask: MaskSpec::new(crate::mri_model::MaskKind::Gaussian2d, 4.0),
            mask_per_record: true,
        }
    }
}

/// Records `base_seed .. base_seed + count`, each fully determined by its
/// seed.
pub fn make_dataset(
    family: &PhantomFamily,
    acq: &AcquisitionConfig,
    base_seed: u64,
    count: usize,
) -> Result<Vec<DatasetRecord>> {
    let (h, w) = (family.height, family.width);
    let maps = make_coils(acq.coils, h, w, acq.profile_width)?;
    let shared = acq.mask.generate(h, w, base_seed)?;
    (0..count as u64)
        .map(|i| {
            let seed = base_seed + i;
            let phantom = make_phantom(&family.sample(seed))?;
            let mask = if acq.mask_per_record {
                acq.mask.generate(h, w, seed)?
            } else {
                shared.clone()
            };
            simulate_acquisition(&phantom, &maps, &mask, acq.sigma, seed)
        })
        .collect()
}
