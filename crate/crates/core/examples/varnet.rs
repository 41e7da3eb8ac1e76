//! End-to-end variational network: cascades of U-Net refinements with a
//! learned soft data-consistency step, trained with an L1 loss.

use mrirecon::nets::{ModelConfig, ModelKind};
use mrirecon::phantom::{make_dataset, AcquisitionConfig, PhantomFamily};
use mrirecon::train::{train, validate, TrainConfig, TrainOutputs};

fn main() -> mrirecon::Result<()> {
    let family = PhantomFamily { height: 32, width: 32, ..PhantomFamily::default() };
    let acq = AcquisitionConfig::default();
    let train_set = make_dataset(&family, &acq, 0, 16)?;
    let val = make_dataset(&family, &acq, 500, 4)?;

    let config = ModelConfig::desk(ModelKind::Varnet);
    println!(
        "varnet: {} cascades, U-Net with {} pools and {} channels, {} parameters",
        config.cascade.n_cascades,
        config.unet.pools,
        config.unet.channels,
        config.param_count()
    );
    let tc = TrainConfig { epochs: 3, seed: 2, ..TrainConfig::default() };
    let before = validate(&config, &tc, &mrirecon::nets::init_params(&config, 2)?, &val)?;
    let out = train(&config, &tc, &train_set, &val, TrainOutputs::default())?;
    let after = validate(&config, &tc, &out.best, &val)?;
    println!("validation L1 {:.5} -> {:.5}, SSIM {:.4} -> {:.4}", before.0, after.0, before.1, after.1);
    Ok(())
}
