//! Generate a small synthetic dataset and write it to disk as `.cks` records.

use std::path::PathBuf;

use mrirecon::io::{export_image, read_record, write_record};
use mrirecon::phantom::{make_dataset, AcquisitionConfig, PhantomFamily};

fn main() -> mrirecon::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("mrirecon_demo"));
    std::fs::create_dir_all(&out)?;

    let family = PhantomFamily::default();
    let acq = AcquisitionConfig::default();
    let records = make_dataset(&family, &acq, 100, 4)?;
    for rec in &records {
        let path = out.join(format!("record_{}.cks", rec.meta.id));
        write_record(&path, rec)?;
        let lesion_px = rec.lesion_mask.iter().filter(|&&m| m).count();
        println!(
            "{}: {}x{}, {} coils, R={:.2}, {lesion_px} lesion pixels",
            path.display(),
            rec.reference.height,
            rec.reference.width,
            rec.maps.n_coils(),
            rec.mask.achieved_acceleration()
        );
    }
    let back = read_record(&out.join("record_100.cks"))?;
    export_image(&back.reference, &out.join("reference_100.pgm"))?;
    println!("wrote {}", out.join("reference_100.pgm").display());
    Ok(())
}
