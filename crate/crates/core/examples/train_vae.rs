//! Train the multimodal autoencoder on the DCE family and reconstruct a
//! held-out study from DCE1 alone.

use flowmi::bench::run::family_train_data;
use flowmi::metrics::psnr;
use flowmi::mmvae::{train_vae, LossWeights, MultimodalVae};
use flowmi::nn::Activation;
use flowmi::synth::{generate_dataset, DatasetConfig, Family, ModalityId};
use flowmi::train::OptimConfig;
use flowmi::{Result, Rng};

fn main() -> Result<()> {
    let ds = generate_dataset(3, &DatasetConfig::default())?;
    let data = family_train_data(&ds, Family::DceTriplet)?;
    let optim = OptimConfig {
        epochs: 40,
        lr: 1e-3,
        ..OptimConfig::default()
    };
    let mut rng = Rng::new(1);
    let mut vae = MultimodalVae::init(&mut rng, 3, &data.image_shape, 16, &[64], Activation::Tanh)?;
    let h = train_vae(&mut vae, &data, &LossWeights::default(), &optim, &mut rng)?;
    let rec = h.term("rec").expect("recorded");
    println!("{} steps; rec {:.4} -> {:.4}", h.steps, rec[0], rec[rec.len() - 1]);

    for study in ds.select(&ds.manifest.splits.test_mini) {
        let study = study?;
        if study.family != Family::DceTriplet {
            continue;
        }
        let dce1 = study.image(ModalityId::DCE1)?;
        let z = vae.encode_observed(&[Some(dce1), None, None])?;
        let out = vae.decode(&z.mu)?;
        println!("{}: DCE2 from DCE1 alone, PSNR {:.2} dB", study.id, psnr(&out[1], study.image(ModalityId::DCE2)?, 1.0)?);
    }
    Ok(())
}
