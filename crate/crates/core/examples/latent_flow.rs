//! Two-stage training (autoencoder, then a velocity field on its frozen
//! latents) and imputation of DCE2 from DCE1 and DCE3.

use flowmi::bench::run::family_train_data;
use flowmi::checkpoint::vae_bytes;
use flowmi::flow::{impute, train_flow, FlowTrainConfig, IntegratorConfig, VelocityField};
use flowmi::metrics::{psnr, ssim, SsimConfig};
use flowmi::mmvae::{train_vae, LossWeights, MultimodalVae};
use flowmi::nn::Activation;
use flowmi::synth::{generate_dataset, DatasetConfig, Family, ModalityId};
use flowmi::train::OptimConfig;
use flowmi::{Result, Rng};

fn main() -> Result<()> {
    let ds = generate_dataset(4, &DatasetConfig::default())?;
    let data = family_train_data(&ds, Family::DceTriplet)?;
    let optim = OptimConfig {
        epochs: 40,
        lr: 1e-3,
        ..OptimConfig::default()
    };
    let mut rng = Rng::new(2);
    let mut vae = MultimodalVae::init(&mut rng, 3, &data.image_shape, 16, &[64], Activation::Tanh)?;
    train_vae(&mut vae, &data, &LossWeights::default(), &optim, &mut rng)?;

    let frozen = vae_bytes(&vae);
    let mut field = VelocityField::init(&mut rng, 16, &[64, 64], Activation::Tanh)?;
    let h = train_flow(&mut field, &vae, &data, &FlowTrainConfig::default(), &optim, &mut rng)?;
    let lfm = h.term("lfm").expect("recorded");
    println!("flow loss {:.4} -> {:.4}; autoencoder untouched: {}", lfm[0], lfm[lfm.len() - 1], frozen == vae_bytes(&vae));

    let integ = IntegratorConfig::default();
    for id in &ds.manifest.splits.test {
        let study = ds.study(id)?;
        if study.family != Family::DceTriplet {
            continue;
        }
        let slots = [Some(study.image(ModalityId::DCE1)?), None, Some(study.image(ModalityId::DCE3)?)];
        let out = impute(&vae, &field, &slots, &integ, &mut rng)?;
        let truth = study.image(ModalityId::DCE2)?;
        println!(
            "{id}: DCE2 PSNR {:.2} dB, SSIM {:.1}%",
            psnr(&out.composited[1], truth, 1.0)?,
            100.0 * ssim(&out.composited[1], truth, &SsimConfig::default())?
        );
    }
    Ok(())
}
