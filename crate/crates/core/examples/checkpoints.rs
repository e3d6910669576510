//! Save and reload model weights in the PMPW format.

use std::fs::File;

use flowmi::checkpoint::{read_flow, read_vae, write_flow, write_vae};
use flowmi::flow::VelocityField;
use flowmi::mmvae::MultimodalVae;
use flowmi::nn::Activation;
use flowmi::{Result, Rng};

fn main() -> Result<()> {
    let mut rng = Rng::new(9);
    let vae = MultimodalVae::init(&mut rng, 2, &[16, 16], 16, &[64], Activation::Tanh)?;
    let field = VelocityField::init(&mut rng, 16, &[64, 64], Activation::Tanh)?;
    let dir = std::env::temp_dir();
    let (vp, fp) = (dir.join("example_vae.pmpw"), dir.join("example_flow.pmpw"));
    write_vae(&mut File::create(&vp)?, &vae)?;
    write_flow(&mut File::create(&fp)?, &field)?;
    let vae_back = read_vae(&mut File::open(&vp)?)?;
    let field_back = read_flow(&mut File::open(&fp)?)?;
    println!("{} bytes, identical: {}", std::fs::metadata(&vp)?.len(), vae_back == vae);
    println!("{} bytes, identical: {}", std::fs::metadata(&fp)?.len(), field_back == field);
    Ok(())
}
