//! PSNR, SSIM and mean ± std aggregation.

use flowmi::metrics::{aggregate, psnr, ssim, SsimConfig};
use flowmi::{Result, Rng, Tensor};

fn main() -> Result<()> {
    let mut rng = Rng::new(0);
    let clean = Tensor::new(vec![16, 16], (0..256).map(|i| (i % 16) as f64 / 15.0).collect())?;
    let cfg = SsimConfig::default();
    let mut scores = Vec::new();
    for sigma in [0.0, 0.01, 0.05, 0.1] {
        let noise: Vec<f64> = (0..clean.len()).map(|_| sigma * rng.normal()).collect();
        let noisy = Tensor::new(vec![16, 16], clean.data().iter().zip(&noise).map(|(v, n)| (v + n).clamp(0.0, 1.0)).collect())?;
        let p = psnr(&noisy, &clean, 1.0)?;
        let s = ssim(&noisy, &clean, &cfg)?;
        println!("noise {sigma:<5} PSNR {p:>7.2} dB  SSIM {:.2}%", 100.0 * s);
        scores.push(p);
    }
    let a = aggregate(&scores)?;
    println!("aggregate: mean {} ± {:.2} (a perfect score is +inf and is left out of the std)", a.mean, a.std);
    Ok(())
}
