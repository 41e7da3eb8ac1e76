//! Same-padded 2D cross-correlation with odd square, optionally dilated,
//! kernels.

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub dilation: usize,
}

pub(crate) fn check_dims(x: &Tensor, kernel: &Tensor, bias: &Tensor, dilation: usize) -> Result<ConvDims> {
    if dilation == 0 {
        return Err(Error::Shape("dilation must be >= 1".into()));
    }
    let (xs, ks) = (x.shape(), kernel.shape());
    if xs.len() != 3 || ks.len() != 4 {
        return Err(Error::Shape(format!(
            "conv2d expects input [c,h,w] and kernel [o,c,k,k], got {xs:?} and {ks:?}"
        )));
    }
    if ks[2] != ks[3] || ks[2] % 2 == 0 {
        return Err(Error::Shape(format!("kernel must be odd and square, got {ks:?}")));
    }
    if ks[1] != xs[0] {
        return Err(Error::Shape(format!(
            "channel mismatch: input has {} channels, kernel expects {}",
            xs[0], ks[1]
        )));
    }
    if bias.shape() != [ks[0]] {
        return Err(Error::Shape(format!(
            "bias shape {:?} does not match {} output channels",
            bias.shape(),
            ks[0]
        )));
    }
    Ok(ConvDims {
        c_in: xs[0],
        c_out: ks[0],
        h: xs[1],
        w: xs[2],
        k: ks[2],
        dilation,
    })
}

/// Valid range of output coordinates for a tap at `offset` (in `-p..=p`).
#[inline]
fn tap_range(offset: isize, len: usize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset.max(0)).max(0) as usize;
    (lo, hi)
}

pub(crate) fn forward(x: &[f64], kernel: &[f64], bias: &[f64], d: ConvDims) -> Vec<f64> {
    let ConvDims { c_in, c_out, h, w, k, dilation } = d;
    let p = (k / 2) as isize;
    let dil = dilation as isize;
    let plane = h * w;
    let mut out = vec![0.0; c_out * plane];
    for co in 0..c_out {
        let dst = &mut out[co * plane..(co + 1) * plane];
        dst.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..c_in {
            let src = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                let dy = (ky as isize - p) * dil;
                let (y0, y1) = tap_range(dy, h);
                if y0 >= y1 {
                    continue;
                }
                for kx in 0..k {
                    let dx = (kx as isize - p) * dil;
                    let wv = kernel[((co * c_in + ci) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (x0, x1) = tap_range(dx, w);
                    if x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let srow = &src[sy * w..(sy + 1) * w];
                        let drow = &mut dst[y * w..(y + 1) * w];
                        let sx0 = (x0 as isize + dx) as usize;
                        for (o, s) in drow[x0..x1].iter_mut().zip(&srow[sx0..sx0 + (x1 - x0)]) {
                            *o += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradient with respect to the input, given the output gradient.
pub(crate) fn backward_input(grad_out: &[f64], kernel: &[f64], d: ConvDims) -> Vec<f64> {
    let ConvDims { c_in, c_out, h, w, k, dilation } = d;
    let p = (k / 2) as isize;
    let dil = dilation as isize;
    let plane = h * w;
    let mut gx = vec![0.0; c_in * plane];
    for ci in 0..c_in {
        let dst = &mut gx[ci * plane..(ci + 1) * plane];
        for co in 0..c_out {
            let g = &grad_out[co * plane..(co + 1) * plane];
            for ky in 0..k {
                let dy = (ky as isize - p) * dil;
                let (y0, y1) = tap_range(dy, h);
                if y0 >= y1 {
                    continue;
                }
                for kx in 0..k {
                    let dx = (kx as isize - p) * dil;
                    let wv = kernel[((co * c_in + ci) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (x0, x1) = tap_range(dx, w);
                    if x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (x0 as isize + dx) as usize;
                        let grow = &g[y * w + x0..y * w + x1];
                        let drow = &mut dst[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                        for (o, gv) in drow.iter_mut().zip(grow) {
                            *o += wv * gv;
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Gradients with respect to kernel and bias.
pub(crate) fn backward_params(grad_out: &[f64], x: &[f64], d: ConvDims) -> (Vec<f64>, Vec<f64>) {
    let ConvDims { c_in, c_out, h, w, k, dilation } = d;
    let p = (k / 2) as isize;
    let dil = dilation as isize;
    let plane = h * w;
    let mut gk = vec![0.0; c_out * c_in * k * k];
    let mut gb = vec![0.0; c_out];
    for co in 0..c_out {
        let g = &grad_out[co * plane..(co + 1) * plane];
        gb[co] = g.iter().sum();
        for ci in 0..c_in {
            let src = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                let dy = (ky as isize - p) * dil;
                let (y0, y1) = tap_range(dy, h);
                if y0 >= y1 {
                    continue;
                }
                for kx in 0..k {
                    let dx = (kx as isize - p) * dil;
                    let (x0, x1) = tap_range(dx, w);
                    if x0 >= x1 {
                        continue;
                    }
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (x0 as isize + dx) as usize;
                        let grow = &g[y * w + x0..y * w + x1];
                        let srow = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                        acc += grow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                    }
                    gk[((co * c_in + ci) * k + ky) * k + kx] = acc;
                }
            }
        }
    }
    (gk, gb)
}

/// Same-padded cross-correlation `x[c_in,h,w] ⋆ kernel[c_out,c_in,k,k] + bias[c_out]`.
pub fn conv2d(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    conv2d_dilated(x, kernel, bias, 1)
}

/// [`conv2d`] with taps spaced `dilation` pixels apart.
pub fn conv2d_dilated(x: &Tensor, kernel: &Tensor, bias: &Tensor, dilation: usize) -> Result<Tensor> {
    let d = check_dims(x, kernel, bias, dilation)?;
    let out = forward(x.data(), kernel.data(), bias.data(), d);
    Tensor::new(vec![d.c_out, d.h, d.w], out)
}

/// Adjoint of the bias-free convolution as a linear map of its input.
pub fn conv2d_adjoint(y: &Tensor, kernel: &Tensor, dilation: usize) -> Result<Tensor> {
    let ks = kernel.shape();
    let ys = y.shape();
    if ks.len() != 4 || ys.len() != 3 || ys[0] != ks[0] {
        return Err(Error::Shape(format!(
            "adjoint expects y [o,h,w] and kernel [o,c,k,k], got {ys:?} and {ks:?}"
        )));
    }
    let d = ConvDims {
        c_in: ks[1],
        c_out: ks[0],
        h: ys[1],
        w: ys[2],
        k: ks[2],
        dilation: dilation.max(1),
    };
    Tensor::new(vec![d.c_in, d.h, d.w], backward_input(y.data(), kernel.data(), d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Textbook zero-padded cross-correlation, one output sample at a time.
    fn naive(x: &Tensor, kern: &Tensor, bias: &Tensor, dil: isize) -> Tensor {
        let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (c_out, k) = (kern.shape()[0], kern.shape()[2]);
        let p = (k / 2) as isize;
        let mut out = Tensor::zeros(&[c_out, h, w]);
        for co in 0..c_out {
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    let mut acc = bias.data()[co];
                    for ci in 0..c_in {
                        for ky in 0..k as isize {
                            for kx in 0..k as isize {
                                let (sy, sx) = (y + (ky - p) * dil, xx + (kx - p) * dil);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let xv = x.data()[(ci * h + sy as usize) * w + sx as usize];
                                let kv = kern.data()
                                    [((co * c_in + ci) * k + ky as usize) * k + kx as usize];
                                acc += xv * kv;
                            }
                        }
                    }
                    out.data_mut()[(co * h + y as usize) * w + xx as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::randn(&[2, 5, 6], &mut rng);
        let mut kern = Tensor::zeros(&[2, 2, 3, 3]);
        kern.data_mut()[4] = 1.0; // (0,0,1,1)
        kern.data_mut()[9 + 9 + 9 + 4] = 1.0; // (1,1,1,1)
        let y = conv2d(&x, &kern, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let x = Tensor::full(&[1, 4, 4], 3.0);
        let y = conv2d(&x, &Tensor::zeros(&[2, 1, 3, 3]), &Tensor::new(vec![2], vec![0.5, -1.0]).unwrap())
            .unwrap();
        assert!(y.data()[..16].iter().all(|&v| v == 0.5));
        assert!(y.data()[16..].iter().all(|&v| v == -1.0));
    }

    #[test]
    fn ones_on_ones_counts_neighbours() {
        let x = Tensor::full(&[1, 3, 3], 1.0);
        let y = conv2d(&x, &Tensor::full(&[1, 1, 3, 3], 1.0), &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.data()[4], 9.0);
        assert_eq!(y.data()[0], 4.0);
        assert_eq!(y.data()[8], 4.0);
        assert_eq!(y.data()[1], 6.0);
    }

    #[test]
    fn matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(ci, co, h, w, k, dil) in &[
            (3, 2, 7, 5, 3, 1),
            (1, 4, 4, 9, 5, 1),
            (2, 2, 3, 3, 1, 1),
            (2, 1, 2, 2, 5, 1),
            (2, 3, 9, 8, 3, 2),
            (1, 2, 5, 6, 5, 3),
        ] {
            let x = Tensor::randn(&[ci, h, w], &mut rng);
            let kern = Tensor::randn(&[co, ci, k, k], &mut rng);
            let b = Tensor::randn(&[co], &mut rng);
            let fast = conv2d_dilated(&x, &kern, &b, dil).unwrap();
            let slow = naive(&x, &kern, &b, dil as isize);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::randn(&[3, 6, 7], &mut rng);
        let y = Tensor::randn(&[4, 6, 7], &mut rng);
        let kern = Tensor::randn(&[4, 3, 5, 5], &mut rng);
        for dil in [1, 2] {
            let lhs = conv2d_dilated(&x, &kern, &Tensor::zeros(&[4]), dil).unwrap().dot(&y);
            let rhs = x.dot(&conv2d_adjoint(&y, &kern, dil).unwrap());
            assert!((lhs - rhs).abs() / (x.norm() * y.norm()) < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let err = conv2d(&x, &Tensor::zeros(&[1, 3, 3, 3]), &Tensor::zeros(&[1])).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        let err = conv2d(&x, &Tensor::zeros(&[1, 2, 2, 2]), &Tensor::zeros(&[1])).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }
}
