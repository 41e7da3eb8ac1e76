//! ℓ₁-wavelet compressed sensing against zero filling on one record.

use mrirecon::baselines::{cs_l1wavelet_solve, zero_filled, CsConfig};
use mrirecon::metrics::{normalized_magnitude, psnr, ssim};
use mrirecon::mri_model::ComplexImage;
use mrirecon::phantom::{make_dataset, AcquisitionConfig, PhantomFamily};

fn score(x: &ComplexImage, reference: &ComplexImage) -> mrirecon::Result<(f64, f64)> {
    let (a, b) = (normalized_magnitude(x), normalized_magnitude(reference));
    Ok((ssim(&a, &b, x.height, x.width)?, psnr(&a, &b, x.height, x.width)?))
}

fn main() -> mrirecon::Result<()> {
    let rec = make_dataset(&PhantomFamily::default(), &AcquisitionConfig::default(), 9000, 1)?.remove(0);

    let zf = zero_filled(&rec.kspace, &rec.maps, &rec.mask)?;
    let (s, p) = score(&zf, &rec.reference)?;
    println!("zero-filled     SSIM {s:.4}  PSNR {p:.2} dB");

    for alpha in [0.001, 0.005, 0.02] {
        let out = cs_l1wavelet_solve(&rec.kspace, &rec.maps, &rec.mask, &CsConfig { alpha, ..CsConfig::default() })?;
        let (s, p) = score(&out.image, &rec.reference)?;
        println!(
            "cs α={alpha:<6} SSIM {s:.4}  PSNR {p:.2} dB  ({} iterations, objective {:.4} -> {:.4})",
            out.iterations,
            out.objective[0],
            out.objective.last().unwrap()
        );
    }
    Ok(())
}
