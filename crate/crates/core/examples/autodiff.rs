//! Reverse-mode differentiation through the masked multicoil operator:
//! the gradient of `½‖P F(S x) − y‖²` with respect to `x` is `A*(A x − y)`.

use std::sync::Arc;

use mrirecon::diffmath::{CTensor, ParameterStore, Tape, Tensor};
use mrirecon::mri_model::{adjoint_op, forward_op, ComplexImage, MultiCoilKSpace};
use mrirecon::phantom::make_coils;
use mrirecon::sampling::gaussian2d_mask;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> mrirecon::Result<()> {
    let (h, w) = (16, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let maps = make_coils(3, h, w, 0.8)?;
    let mask = gaussian2d_mask(h, w, 3.0, 0.7, 0.05, 0)?;
    let y = MultiCoilKSpace::new(CTensor::randn(&[3, h, w], &mut rng))?;

    // x lives in the store as its (Re, Im) channels
    let x0 = Tensor::randn(&[2, h, w], &mut rng);
    let mut store = ParameterStore::new();
    store.insert("x", x0.clone())?;

    let mut tape = Tape::new();
    let xc = tape.param(&store, "x")?;
    let x = tape.from_channels(xc)?;
    let s = Arc::clone(maps.tensor());
    let p = Arc::new(mask.keep().iter().map(|&k| k as u8 as f64).collect::<Vec<_>>());
    let coils = tape.expand(x, &s)?;
    let k = tape.fft2c(coils)?;
    let ax = tape.mask(k, &p)?;
    let yv = tape.constant_complex(y.samples.clone());
    let r = tape.csub(ax, yv)?;
    let r = tape.cabs(r)?;
    let sq = tape.square(r)?;
    let total = tape.sum(sq)?;
    let loss = tape.scale(total, 0.5)?;
    tape.backward(loss, &mut store)?;
    println!("loss {:.6} over {} tape nodes", tape.real(loss)?.item(), tape.len());

    let d = x0.data();
    let n = h * w;
    let img = ComplexImage::new(h, w, (0..n).map(|i| num_complex::Complex64::new(d[i], d[n + i])).collect())?;
    let resid = MultiCoilKSpace::new(forward_op(&img, &maps, &mask)?.samples.sub(&y.samples))?;
    let expected = adjoint_op(&resid, &maps, &mask)?;
    let g = store.grad("x").expect("gradient");
    let err: f64 = (0..n)
        .map(|i| (g.data()[i] - expected.pixels[i].re).powi(2) + (g.data()[n + i] - expected.pixels[i].im).powi(2))
        .sum::<f64>()
        .sqrt();
    println!("‖∇x − A*(Ax − y)‖ / ‖A*(Ax − y)‖ = {:.2e}", err / expected.norm());
    Ok(())
}
