//! Lesion-detection metrics on a phantom and the cohort weighted average.

use mrirecon::baselines::{cs_l1wavelet, zero_filled};
use mrirecon::io::{write_metrics, MetricsRow};
use mrirecon::metrics::{normalized_magnitude, report};
use mrirecon::phantom::{make_dataset, AcquisitionConfig, PhantomFamily};

fn main() -> mrirecon::Result<()> {
    let family = PhantomFamily { max_lesions: 3, ..PhantomFamily::default() };
    let rec = make_dataset(&family, &AcquisitionConfig::default(), 42, 1)?.remove(0);
    let reference = normalized_magnitude(&rec.reference);

    let candidates = [
        ("zerofill", zero_filled(&rec.kspace, &rec.maps, &rec.mask)?),
        ("cs", cs_l1wavelet(&rec.kspace, &rec.maps, &rec.mask, 0.005, 60)?),
        ("reference", rec.reference.clone()),
    ];
    let mut rows = Vec::new();
    let mut triples = Vec::new();
    for (name, img) in &candidates {
        let r = report(&normalized_magnitude(img), &reference, &rec.lesion_mask, &rec.wm_mask, &rec.kspace)?;
        if let (Some(cr), Some(wmn), Some(bgn)) = (r.cr, r.wmn, r.bgn) {
            triples.push((cr, wmn, bgn));
        }
        rows.push(MetricsRow::new(&rec.meta.id, name, "demo", rec.meta.acceleration, &r, None));
    }
    if triples.len() == rows.len() {
        let wa = mrirecon::metrics::weighted_average(&triples)?;
        for (row, w) in rows.iter_mut().zip(wa) {
            row.wa = Some(w);
        }
    }
    write_metrics(std::io::stdout(), &rows)
}
