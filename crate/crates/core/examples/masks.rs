//! Undersampling masks: 2D Gaussian, calibrated Poisson disc and equispaced
//! lines, with their achieved accelerations.

use mrirecon::sampling::{
    equidistant1d_mask, gaussian2d_mask, mask_report, poisson2d_calibrated, OffsetPolicy, PoissonParams,
};

fn main() -> mrirecon::Result<()> {
    for acc in [4.0, 6.0, 8.0, 10.0] {
        let m = gaussian2d_mask(218, 170, acc, 0.7, 0.02, 0)?;
        println!("gaussian2d   R={acc:>4}: achieved {:.3}", m.achieved_acceleration());
    }

    let p = poisson2d_calibrated(224, 224, PoissonParams::default(), 0)?;
    println!(
        "poisson2d    R= 7.5: achieved {:.3} (radius scale {:.3})",
        p.mask.achieved_acceleration(),
        p.scale
    );

    let e = equidistant1d_mask(256, 256, 4.0, 0.08, OffsetPolicy::Random, 0)?;
    let r = mask_report(&e);
    println!(
        "equidistant1d R=4: achieved {:.3}, {} fully sampled central columns",
        r.achieved_acceleration, r.acs_cols
    );

    let small = gaussian2d_mask(16, 32, 4.0, 0.7, 0.02, 3)?;
    for y in 0..small.height() {
        let row: String = (0..small.width()).map(|x| if small.is_kept(y, x) { '#' } else { '.' }).collect();
        println!("{row}");
    }
    Ok(())
}
