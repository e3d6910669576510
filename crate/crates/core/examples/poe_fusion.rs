//! Product-of-experts fusion of diagonal Gaussians.

use flowmi::mmvae::{loss_kl, poe_fuse, GaussianPosterior};
use flowmi::{Result, Tensor};

fn gauss(mu: f64, var: f64) -> Result<GaussianPosterior> {
    GaussianPosterior::new(Tensor::vector(vec![mu])?, Tensor::vector(vec![var.ln()])?)
}

fn main() -> Result<()> {
    let a = gauss(1.0, 1.0)?;
    let b = gauss(3.0, 0.5)?;
    let fused = poe_fuse(&[a.clone(), b.clone()], false)?;
    println!("experts N(1, 1) and N(3, 0.5)");
    println!("fused          mean {:.4}, variance {:.4}", fused.mu.data()[0], fused.variance().data()[0]);
    let with_prior = poe_fuse(&[a, b], true)?;
    println!("with N(0,1)    mean {:.4}, variance {:.4}", with_prior.mu.data()[0], with_prior.variance().data()[0]);
    println!("KL(N(0, 2) || N(0, 1)) = {:.6}", loss_kl(&[gauss(0.0, 2.0)?])?);
    Ok(())
}
