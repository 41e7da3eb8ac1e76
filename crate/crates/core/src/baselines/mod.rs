//! Non-learned reconstructions: the zero-filled adjoint and an ℓ₁-wavelet
//! compressed-sensing solver.

pub mod wavelet;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mri_model::{adjoint_op, forward_op, ComplexImage, MultiCoilKSpace, SamplingMask, SensitivityMaps};
pub use wavelet::Wavelet2d;

/// `A*(y)`.
pub fn zero_filled(y: &MultiCoilKSpace, maps: &SensitivityMaps, mask: &SamplingMask) -> Result<ComplexImage> {
    adjoint_op(y, maps, mask)
}

/// Soft threshold: `sign(v)·max(|v| − t, 0)`.
pub fn shrink(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsConfig {
    pub alpha: f64,
    pub max_iter: usize,
    pub levels: usize,
    /// Stop once `‖xₖ − xₖ₋₁‖ / ‖xₖ‖` falls below this.
    pub tolerance: f64,
}

impl Default for CsConfig {
    fn default() -> Self {
        Self {
            alpha: 0.005,
            max_iter: 60,
            levels: 3,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CsResult {
    pub image: ComplexImage,
    /// Objective of the accepted iterate, starting with the initial one.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

/// The padded grid the solver works on: the image sits centered inside.
struct Grid {
    h: usize,
    w: usize,
    ph: usize,
    pw: usize,
    top: usize,
    left: usize,
}

impl Grid {
    fn crop(&self, z: &[Complex64]) -> ComplexImage {
        let mut px = Vec::with_capacity(self.h * self.w);
        for y in 0..self.h {
            let s = (y + self.top) * self.pw + self.left;
            px.extend_from_slice(&z[s..s + self.w]);
        }
        ComplexImage::new(self.h, self.w, px).expect("consistent dims")
    }

    fn pad(&self, x: &ComplexImage) -> Vec<Complex64> {
        let mut z = vec![Complex64::new(0.0, 0.0); self.ph * self.pw];
        for y in 0..self.h {
            let d = (y + self.top) * self.pw + self.left;
            z[d..d + self.w].copy_from_slice(&x.pixels[y * self.w..(y + 1) * self.w]);
        }
        z
    }
}

struct Problem<'a> {
    y: &'a MultiCoilKSpace,
    maps: &'a SensitivityMaps,
    mask: &'a SamplingMask,
    grid: Grid,
    wt: Wavelet2d,
    alpha: f64,
}

impl Problem<'_> {
    fn residual(&self, z: &[Complex64]) -> Result<MultiCoilKSpace> {
        let ax = forward_op(&self.grid.crop(z), self.maps, self.mask)?;
        MultiCoilKSpace::new(ax.samples.sub(&self.y.samples))
    }

    fn parts(z: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
        (z.iter().map(|v| v.re).collect(), z.iter().map(|v| v.im).collect())
    }

    fn objective(&self, z: &[Complex64]) -> Result<f64> {
        let r = self.residual(z)?;
        let data = 0.5 * r.samples.norm().powi(2);
        let (re, im) = Self::parts(z);
        let l1: f64 = self.wt.forward(&re)?.iter().chain(self.wt.forward(&im)?.iter()).map(|c| c.abs()).sum();
        Ok(data + self.alpha * l1)
    }

    /// `z − ∇f(z)` followed by the wavelet-domain soft threshold.
    fn prox_grad(&self, z: &[Complex64]) -> Result<Vec<Complex64>> {
        let g = self.grid.pad(&adjoint_op(&self.residual(z)?, self.maps, self.mask)?);
        let v: Vec<Complex64> = z.iter().zip(&g).map(|(a, b)| a - b).collect();
        let (re, im) = Self::parts(&v);
        let thresh = |part: &[f64]| -> Result<Vec<f64>> {
            let c: Vec<f64> = self.wt.forward(part)?.iter().map(|&c| shrink(c, self.alpha)).collect();
            self.wt.inverse(&c)
        };
        let (re, im) = (thresh(&re)?, thresh(&im)?);
        Ok(re.into_iter().zip(im).map(|(r, i)| Complex64::new(r, i)).collect())
    }
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Minimize `½‖A x − y‖² + α(‖W Re x‖₁ + ‖W Im x‖₁)` by monotone FISTA with
/// unit step, starting from the zero-filled image. Images whose sides are
/// not divisible by `2^levels` are zero-padded symmetrically and cropped.
pub fn cs_l1wavelet_solve(
    y: &MultiCoilKSpace,
    maps: &SensitivityMaps,
    mask: &SamplingMask,
    config: &CsConfig,
) -> Result<CsResult> {
    if !(config.alpha >= 0.0) || !config.alpha.is_finite() {
        return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {}", config.alpha)));
    }
    let x0 = adjoint_op(y, maps, mask)?;
    let (h, w) = (x0.height, x0.width);
    let (ph, pw) = Wavelet2d::padded_size(h, w, config.levels);
    let grid = Grid {
        h,
        w,
        ph,
        pw,
        top: (ph - h) / 2,
        left: (pw - w) / 2,
    };
    let p = Problem {
        y,
        maps,
        mask,
        wt: Wavelet2d::new(ph, pw, config.levels)?,
        grid,
        alpha: config.alpha,
    };

    let mut x = p.grid.pad(&x0);
    let mut fx = p.objective(&x)?;
    let mut objective = vec![fx];
    let mut v = x.clone();
    let mut t = 1.0f64;
    let mut iterations = 0;
    for _ in 0..config.max_iter {
        iterations += 1;
        let z = p.prox_grad(&v)?;
        let fz = p.objective(&z)?;
        let x_prev = x.clone();
        if fz <= fx {
            x = z.clone();
            fx = fz;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let (cz, cx) = (t / t_next, (t - 1.0) / t_next);
        v = x
            .iter()
            .zip(&z)
            .zip(&x_prev)
            .map(|((xk, zk), xp)| xk + cz * (zk - xk) + cx * (xk - xp))
            .collect();
        t = t_next;
        objective.push(fx);

        let diff: Vec<Complex64> = x.iter().zip(&x_prev).map(|(a, b)| a - b).collect();
        let nx = norm(&x);
        if nx > 0.0 && norm(&diff) / nx < config.tolerance {
            break;
        }
    }
    Ok(CsResult {
        image: p.grid.crop(&x),
        objective,
        iterations,
    })
}

/// Compressed-sensing reconstruction with `alpha` and `max_iter`, other
/// settings at their defaults.
pub fn cs_l1wavelet(
    y: &MultiCoilKSpace,
    maps: &SensitivityMaps,
    mask: &SamplingMask,
    alpha: f64,
    max_iter: usize,
) -> Result<ComplexImage> {
    let config = CsConfig {
        alpha,
        max_iter,
        ..CsConfig::default()
    };
    Ok(cs_l1wavelet_solve(y, maps, mask, &config)?.image)
}
