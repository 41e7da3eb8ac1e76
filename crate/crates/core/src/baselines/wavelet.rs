//! Orthogonal 4-tap Daubechies wavelet transform with periodic boundaries.

use crate::error::{Error, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Low-pass analysis filter.
pub fn d4_lowpass() -> [f64; 4] {
    let n = 4.0 * std::f64::consts::SQRT_2;
    [(1.0 + SQRT3) / n, (3.0 + SQRT3) / n, (3.0 - SQRT3) / n, (1.0 - SQRT3) / n]
}

/// High-pass analysis filter, `g[k] = (−1)^k h[3−k]`.
pub fn d4_highpass() -> [f64; 4] {
    let h = d4_lowpass();
    [h[3], -h[2], h[1], -h[0]]
}

fn analyze_1d(x: &[f64], out: &mut [f64]) {
    let n = x.len();
    let half = n / 2;
    let (h, g) = (d4_lowpass(), d4_highpass());
    for i in 0..half {
        let (mut a, mut d) = (0.0, 0.0);
        for k in 0..4 {
            let v = x[(2 * i + k) % n];
            a += h[k] * v;
            d += g[k] * v;
        }
        out[i] = a;
        out[half + i] = d;
    }
}

fn synthesize_1d(c: &[f64], out: &mut [f64]) {
    let n = c.len();
    let half = n / 2;
    let (h, g) = (d4_lowpass(), d4_highpass());
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..half {
        let (a, d) = (c[i], c[half + i]);
        for k in 0..4 {
            out[(2 * i + k) % n] += h[k] * a + g[k] * d;
        }
    }
}

/// Multi-level separable 2D transform of a row-major `h×w` array; each
/// level splits the current low-pass block along rows then columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Wavelet2d {
    pub height: usize,
    pub width: usize,
    pub levels: usize,
}

impl Wavelet2d {
    /// Both sides must be divisible by `2^levels`.
    pub fn new(height: usize, width: usize, levels: usize) -> Result<Self> {
        let m = 1usize << levels;
        if height == 0 || width == 0 || height % m != 0 || width % m != 0 {
            return Err(Error::Shape(format!(
                "{height}x{width} grid is not divisible by 2^{levels}"
            )));
        }
        Ok(Self { height, width, levels })
    }

    /// Smallest sizes `≥ (h, w)` that a `levels`-level transform accepts.
    pub fn padded_size(h: usize, w: usize, levels: usize) -> (usize, usize) {
        let m = 1usize << levels;
        (h.div_ceil(m) * m, w.div_ceil(m) * m)
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.height * self.width {
            return Err(Error::Shape(format!(
                "{len} values for a {}x{} wavelet grid",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len())?;
        let w = self.width;
        let mut c = x.to_vec();
        let (mut bh, mut bw) = (self.height, self.width);
        let mut line = vec![0.0; bh.max(bw)];
        let mut out = vec![0.0; bh.max(bw)];
        for _ in 0..self.levels {
            for y in 0..bh {
                analyze_1d(&c[y * w..y * w + bw], &mut out[..bw]);
                c[y * w..y * w + bw].copy_from_slice(&out[..bw]);
            }
            for x in 0..bw {
                for y in 0..bh {
                    line[y] = c[y * w + x];
                }
                analyze_1d(&line[..bh], &mut out[..bh]);
                for y in 0..bh {
                    c[y * w + x] = out[y];
                }
            }
            bh /= 2;
            bw /= 2;
        }
        Ok(c)
    }

    pub fn inverse(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.check(coeffs.len())?;
        let w = self.width;
        let mut c = coeffs.to_vec();
        let mut line = vec![0.0; self.height.max(self.width)];
        let mut out = vec![0.0; self.height.max(self.width)];
        for level in (0..self.levels).rev() {
            let (bh, bw) = (self.height >> level, self.width >> level);
            for x in 0..bw {
                for y in 0..bh {
                    line[y] = c[y * w + x];
                }
                synthesize_1d(&line[..bh], &mut out[..bh]);
                for y in 0..bh {
                    c[y * w + x] = out[y];
                }
            }
            for y in 0..bh {
                synthesize_1d(&c[y * w..y * w + bw], &mut out[..bw]);
                c[y * w..y * w + bw].copy_from_slice(&out[..bw]);
            }
        }
        Ok(c)
    }
}
