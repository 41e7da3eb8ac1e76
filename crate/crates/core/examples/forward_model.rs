//! Multicoil SENSE forward model: simulate k-space from a phantom, check the
//! adjoint identity and look at the zero-filled image.

use mrirecon::mri_model::{adjoint_op, forward_op, SamplingMask};
use mrirecon::phantom::{make_coils, make_phantom, PhantomFamily};
use mrirecon::sampling::gaussian2d_mask;

fn main() -> mrirecon::Result<()> {
    let family = PhantomFamily::default();
    let phantom = make_phantom(&family.sample(7))?;
    let (h, w) = (family.height, family.width);
    let maps = make_coils(8, h, w, 0.8)?;
    let x = &phantom.image;

    let full = SamplingMask::full(h, w);
    let y_full = forward_op(x, &maps, &full)?;
    let back = adjoint_op(&y_full, &maps, &full)?;
    let err: f64 = back.pixels.iter().zip(&x.pixels).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
    println!("fully sampled: ‖A*A x − x‖ / ‖x‖ = {:.2e}", err / x.norm());

    let mask = gaussian2d_mask(h, w, 4.0, 0.7, 0.02, 1)?;
    let y = forward_op(x, &maps, &mask)?;
    let zf = adjoint_op(&y, &maps, &mask)?;
    println!(
        "4x gaussian mask keeps {} of {} samples (R = {:.3})",
        mask.kept_count(),
        h * w,
        mask.achieved_acceleration()
    );
    let lhs = y.samples.inner(&y.samples);
    let rhs = x.inner(&zf);
    println!("⟨Ax, Ax⟩ = {:.6}, ⟨x, A*Ax⟩ = {:.6}", lhs.re, rhs.re);
    println!("zero-filled energy ratio {:.3}", zf.norm() / x.norm());
    Ok(())
}
