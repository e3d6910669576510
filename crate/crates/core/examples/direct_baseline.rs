//! The zero-substitution regressor: missing inputs become zeros and the
//! mask is appended.

use flowmi::baseline::{predict_direct, train_direct, DirectRegressor};
use flowmi::bench::run::family_train_data;
use flowmi::metrics::psnr;
use flowmi::nn::Activation;
use flowmi::synth::{generate_dataset, DatasetConfig, Family, ModalityId};
use flowmi::train::OptimConfig;
use flowmi::{Result, Rng};

fn main() -> Result<()> {
    let ds = generate_dataset(5, &DatasetConfig::default())?;
    let data = family_train_data(&ds, Family::CtPair)?;
    let optim = OptimConfig {
        epochs: 40,
        lr: 1e-3,
        ..OptimConfig::default()
    };
    let mut rng = Rng::new(3);
    let mut model = DirectRegressor::init(&mut rng, 2, &data.image_shape, &[64], Activation::Relu)?;
    let h = train_direct(&mut model, &data, &optim, &mut rng)?;
    let mse = h.term("mse").expect("recorded");
    println!("mse {:.4} -> {:.4}", mse[0], mse[mse.len() - 1]);

    for id in ds.manifest.splits.test_mini.iter() {
        let study = ds.study(id)?;
        if study.family != Family::CtPair {
            continue;
        }
        let out = predict_direct(&model, &[Some(study.image(ModalityId::CT)?), None])?;
        println!("{id}: CTC PSNR {:.2} dB", psnr(&out.composited[1], study.image(ModalityId::CTC)?, 1.0)?);
    }
    Ok(())
}
