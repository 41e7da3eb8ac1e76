//! Train a CPU-sized CIRIM for a few epochs and compare it with the
//! baselines on held-out records.

use mrirecon::baselines::CsConfig;
use mrirecon::nets::{ModelConfig, ModelKind};
use mrirecon::phantom::{make_dataset, AcquisitionConfig, PhantomFamily};
use mrirecon::train::{evaluate, train, EvalOptions, Method, TrainConfig, TrainOutputs};

fn main() -> mrirecon::Result<()> {
    let family = PhantomFamily::default();
    let acq = AcquisitionConfig::default();
    let train_set = make_dataset(&family, &acq, 1000, 20)?;
    let val = make_dataset(&family, &acq, 5000, 4)?;
    let test = make_dataset(&family, &acq, 9000, 8)?;

    let config = ModelConfig::desk(ModelKind::Cirim);
    println!("CIRIM: {} parameters", config.param_count());
    let tc = TrainConfig { epochs: 3, seed: 1, ..TrainConfig::default() };
    let out = train(&config, &tc, &train_set, &val, TrainOutputs::default())?;
    for row in &out.log {
        println!("epoch {} {:<5} loss {:.5} ssim {:.4}", row.epoch, row.split, row.loss, row.ssim);
    }

    let methods = [
        Method::Model { name: "cirim".into(), config, params: out.best },
        Method::Cs(CsConfig::default()),
    ];
    let ev = evaluate(&methods, &test, &EvalOptions::default())?;
    for row in &ev.summary {
        println!("{:<9} SSIM {:.4}  PSNR {:.2} dB", row.method, row.ssim, row.psnr_db);
    }
    Ok(())
}
