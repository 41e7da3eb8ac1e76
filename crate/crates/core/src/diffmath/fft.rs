//! Centered, orthonormal 2D DFT.
//!
//! The DC sample sits at index `(h/2, w/2)`; both directions are scaled by
//! `1/sqrt(h·w)` so the forward and inverse transforms are exact adjoints.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use super::tensor::CTensor;
use crate::error::Result;

thread_local! {
    static PLANNER: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let (planner, cache) = &mut *p;
        cache
            .entry((len, inverse))
            .or_insert_with(|| {
                let dir = if inverse {
                    FftDirection::Inverse
                } else {
                    FftDirection::Forward
                };
                planner.plan_fft(len, dir)
            })
            .clone()
    })
}

/// In-place centered transform of one `h×w` image.
fn transform_2d(data: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    debug_assert_eq!(data.len(), h * w);
    // ifftshift: element at centered index moves to the origin
    let mut buf = vec![Complex64::new(0.0, 0.0); h * w];
    for y in 0..h {
        let sy = (y + h - h / 2) % h;
        for x in 0..w {
            let sx = (x + w - w / 2) % w;
            buf[sy * w + sx] = data[y * w + x];
        }
    }

    let row_fft = plan(w, inverse);
    let mut scratch = vec![Complex64::new(0.0, 0.0); row_fft.get_inplace_scratch_len()];
    for row in buf.chunks_exact_mut(w) {
        row_fft.process_with_scratch(row, &mut scratch);
    }

    let col_fft = plan(h, inverse);
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    let mut scratch = vec![Complex64::new(0.0, 0.0); col_fft.get_inplace_scratch_len()];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        col_fft.process_with_scratch(&mut col, &mut scratch);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }

    // fftshift back to centered indexing, with orthonormal scaling
    let scale = 1.0 / ((h * w) as f64).sqrt();
    for y in 0..h {
        let sy = (y + h / 2) % h;
        for x in 0..w {
            let sx = (x + w / 2) % w;
            data[sy * w + sx] = buf[y * w + x] * scale;
        }
    }
}

/// Apply the centered transform to every trailing `h×w` slice of `data`.
pub(crate) fn fft2c_slices(data: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    for img in data.chunks_exact_mut(h * w) {
        transform_2d(img, h, w, inverse);
    }
}

/// Centered orthonormal forward DFT over the last two dimensions.
pub fn fft2c(x: &CTensor) -> Result<CTensor> {
    let (h, w) = x.grid()?;
    let mut out = x.clone();
    fft2c_slices(out.data_mut(), h, w, false);
    Ok(out)
}

/// Centered orthonormal inverse DFT over the last two dimensions.
pub fn ifft2c(y: &CTensor) -> Result<CTensor> {
    let (h, w) = y.grid()?;
    let mut out = y.clone();
    fft2c_slices(out.data_mut(), h, w, true);
    Ok(out)
}
