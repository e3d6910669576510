//! Analytic-oracle suites runnable from the command line.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;

use crate::error::Result;
use crate::flow::{
    integrate, interpolate, lfm_loss_vars, target_velocity_conditional, target_velocity_endpoint, FlowPair, FnField,
    IntegratorConfig, InterpolantConfig, TargetKind, VelocityField,
};
use crate::gradcheck::{finite_diff_check, GradCheckReport};
use crate::metrics::{aggregate, psnr, psnr_from_mse, ssim, SsimConfig};
use crate::mmvae::{
    full_posterior_means, loss_kl, poe_fuse, vae_objective_with_target, GaussianPosterior, LossWeights, Mask,
    MultimodalVae,
};
use crate::nn::{Activation, Module};
use crate::rng::{derive_seed, Rng};
use crate::synth::{generate_dataset, DatasetConfig};
use crate::tensor::Tensor;

/// Signature of a PoE implementation, so a faulty one can be plugged in.
pub type FuseFn = fn(&[GaussianPosterior], bool) -> Result<GaussianPosterior>;

pub const SUITES: [&str; 7] = ["poe", "kl", "interpolant", "euler", "gradcheck", "split", "metrics"];

#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

/// Max absolute gap between the fused density and the numerically
/// normalized product of expert densities on a 4001-point grid over
/// `[-10, 10]`, worst case over `sets` random 1-D expert sets.
pub fn poe_density_error(fuse: FuseFn, sets: usize, seed: u64) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let n = 4001;
    let h = 20.0 / (n - 1) as f64;
    let grid: Vec<f64> = (0..n).map(|i| -10.0 + i as f64 * h).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..sets {
        let k = 1 + rng.below(4);
        let experts: Vec<GaussianPosterior> = (0..k)
            .map(|_| {
                let mu = rng.uniform_range(-3.0, 3.0);
                let lv = rng.uniform_range(-1.5, 1.5);
                GaussianPosterior::new(Tensor::vector(vec![mu])?, Tensor::vector(vec![lv])?)
            })
            .collect::<Result<_>>()?;
        let fused = fuse(&experts, false)?;
        let prod: Vec<f64> = grid.iter().map(|&x| experts.iter().map(|e| e.density(0, x)).product()).collect();
        let z = h * (prod.iter().sum::<f64>() - 0.5 * (prod[0] + prod[n - 1]));
        for (&x, p) in grid.iter().zip(&prod) {
            worst = worst.max((fused.density(0, x) - p / z).abs());
        }
    }
    Ok(worst)
}

/// Closed-form value of the KL term for `N(0, 2)` and the smallest KL seen
/// over `count` random posteriors.
pub fn kl_checks(count: usize, seed: u64) -> Result<(f64, f64)> {
    let p = GaussianPosterior::new(Tensor::vector(vec![0.0])?, Tensor::vector(vec![2f64.ln()])?)?;
    let gap = (loss_kl(&[p])? - 0.5 * (2.0 - 2f64.ln() - 1.0)).abs();
    let mut rng = Rng::new(seed);
    let mut min = f64::INFINITY;
    for _ in 0..count {
        let d = 1 + rng.below(4);
        let mu = Tensor::vector((0..d).map(|_| 3.0 * rng.normal()).collect())?;
        let lv = Tensor::vector((0..d).map(|_| rng.uniform_range(-5.0, 5.0)).collect())?;
        min = min.min(loss_kl(&[GaussianPosterior::new(mu, lv)?])?);
    }
    Ok((gap, min))
}

/// Worst endpoint error for σ ∈ {0, 0.5} and worst conditional versus
/// endpoint velocity gap on the σ = 0 line.
pub fn interpolant_checks(seed: u64) -> Result<(f64, f64)> {
    let mut rng = Rng::new(seed);
    let mut endpoint: f64 = 0.0;
    let mut velocity: f64 = 0.0;
    for _ in 0..20 {
        let z0 = rng.normal_tensor(&[3]);
        let z1 = rng.normal_tensor(&[3]);
        for sigma in [0.0, 0.5] {
            let cfg = InterpolantConfig { sigma };
            endpoint = endpoint.max(interpolate(&z0, &z1, 0.0, &cfg, &mut rng)?.max_abs_diff(&z0)?);
            endpoint = endpoint.max(interpolate(&z0, &z1, 1.0, &cfg, &mut rng)?.max_abs_diff(&z1)?);
        }
        let ep = target_velocity_endpoint(&z0, &z1)?;
        for k in 1..10 {
            let t = k as f64 / 10.0;
            let zt = interpolate(&z0, &z1, t, &InterpolantConfig::default(), &mut rng)?;
            velocity = velocity.max(target_velocity_conditional(&z1, &zt, t)?.max_abs_diff(&ep)?);
        }
    }
    Ok((endpoint, velocity))
}

/// Error ratios of Euler on `dz/dt = z`, `z(0) = 1`, against `e` for
/// successive doublings of `N` over {8, 16, 32, 64}.
pub fn euler_ratios() -> Result<Vec<f64>> {
    let field = FnField(|z: &Tensor, _t: f64| Ok(z.clone()));
    let errs = [8, 16, 32, 64]
        .iter()
        .map(|&steps| {
            let cfg = IntegratorConfig {
                steps,
                ..IntegratorConfig::default()
            };
            let z = integrate(&field, &Tensor::vector(vec![1.0])?, &cfg, &mut Rng::new(0))?;
            Ok((z.data()[0] - std::f64::consts::E).abs())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(errs.windows(2).map(|w| w[0] / w[1]).collect())
}

/// Finite-difference check of the full autoencoder objective: two
/// modalities, `d = 2`, one hidden layer of 8, 4×4 images.
pub fn vae_gradcheck(seed: u64) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    let vae = MultimodalVae::init(&mut rng, 2, &[4, 4], 2, &[8], Activation::Tanh)?;
    let rows: Vec<Tensor> = (0..3)
        .map(|_| Tensor::vector((0..32).map(|_| rng.uniform()).collect()))
        .collect::<Result<_>>()?;
    let x = Tensor::stack_rows(&rows)?;
    let masks = vec![Mask::new(vec![true, false]), Mask::new(vec![false, true]), Mask::full(2)];
    let weights = LossWeights {
        lambda_pull: 0.7,
        beta_kl: 0.3,
    };
    // The stop-gradient target is held at its current value; see
    // `vae_objective_with_target`.
    let anchor = full_posterior_means(&vae, &x)?;
    let params: Vec<Tensor> = vae.parameters().into_iter().cloned().collect();
    let noise_seed = derive_seed(seed, 1);
    finite_diff_check(&params, 1e-5, |g, vars| {
        let bound = vae.attach(vars)?;
        let xv = g.constant(x.clone());
        let mut r = Rng::new(noise_seed);
        Ok(vae_objective_with_target(g, &bound, xv, &masks, &weights, &mut r, Some(&anchor))?.total)
    })
}

/// Finite-difference check of the flow-matching loss for one target kind.
pub fn flow_gradcheck(seed: u64, kind: TargetKind) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    let field = VelocityField::init(&mut rng, 2, &[8], Activation::Tanh)?;
    let pairs: Vec<FlowPair> = (0..4)
        .map(|_| FlowPair {
            z0: rng.normal_tensor(&[2]),
            z1: rng.normal_tensor(&[2]),
            mask: Mask::new(vec![true, false]),
        })
        .collect();
    let params: Vec<Tensor> = field.parameters().into_iter().cloned().collect();
    let noise_seed = derive_seed(seed, 1);
    finite_diff_check(&params, 1e-5, |g, vars| {
        let bound = field.attach(vars)?;
        lfm_loss_vars(g, &bound, &pairs, &mut Rng::new(noise_seed), &InterpolantConfig { sigma: 0.3 }, kind)
    })
}

/// Split sizes, nesting, per-class proportionality and determinism for a
/// 100-study dataset. Returns a list of failures.
pub fn split_checks(seed: u64) -> Result<Vec<String>> {
    let cfg = DatasetConfig {
        n_studies: 100,
        ..DatasetConfig::default()
    };
    let ds = generate_dataset(seed, &cfg)?;
    let again = generate_dataset(seed, &cfg)?;
    let s = &ds.manifest.splits;
    let mut fails = Vec::new();
    let sizes = [s.train.len(), s.val.len(), s.test.len(), s.test_mini.len()];
    if sizes != [70, 10, 20, 5] {
        fails.push(format!("sizes {sizes:?}"));
    }
    if !s.test_mini.iter().all(|id| s.test.contains(id)) {
        fails.push("test_mini not nested in test".into());
    }
    if again.manifest.splits != *s {
        fails.push("splits differ between identical runs".into());
    }
    let mut class_of = BTreeMap::new();
    let mut class_size: BTreeMap<u32, usize> = BTreeMap::new();
    for e in &ds.manifest.studies {
        class_of.insert(e.id.as_str(), e.class);
        *class_size.entry(e.class).or_default() += 1;
    }
    for (name, ids, ratio) in [("train", &s.train, 0.7), ("val", &s.val, 0.1), ("test", &s.test, 0.2)] {
        for (&c, &size) in &class_size {
            let got = ids.iter().filter(|id| class_of[id.as_str()] == c).count();
            let want = ratio * size as f64;
            if (got as f64 - want).abs() >= 1.0 {
                fails.push(format!("class {c} has {got} {name} studies, exact share {want}"));
            }
        }
    }
    Ok(fails)
}

/// Returns a list of failed metric identities.
pub fn metric_checks() -> Result<Vec<String>> {
    let mut fails = Vec::new();
    let v = psnr_from_mse(0.01, 1.0);
    if v != 20.0 {
        fails.push(format!("psnr(mse 0.01) = {v}"));
    }
    let mut rng = Rng::new(11);
    let x = Tensor::new(vec![16, 16], (0..256).map(|_| rng.uniform()).collect())?;
    if psnr(&x, &x, 1.0)? != f64::INFINITY {
        fails.push("psnr(x, x) is finite".into());
    }
    let s = ssim(&x, &x, &SsimConfig::default())?;
    if (s - 1.0).abs() > 1e-12 {
        fails.push(format!("ssim(x, x) = {s}"));
    }
    let a = aggregate(&[20.0, 30.0])?;
    if (a.mean - 25.0).abs() > 1e-3 || (a.std - 7.071).abs() > 1e-3 {
        fails.push(format!("aggregate([20, 30]) = {} ± {}", a.mean, a.std));
    }
    Ok(fails)
}

fn judge(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> SuiteResult {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    SuiteResult {
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn listing(fails: Vec<String>) -> (bool, String) {
    if fails.is_empty() {
        (true, "all identities hold".into())
    } else {
        (false, fails.join("; "))
    }
}

pub fn run_suite(name: &str, fuse: FuseFn) -> Option<SuiteResult> {
    let r = match name {
        "poe" => judge("poe", || {
            let e = poe_density_error(fuse, 100, 1)?;
            Ok((e < 1e-3, format!("max density error {e:.2e} over 100 expert sets")))
        }),
        "kl" => judge("kl", || {
            let (gap, min) = kl_checks(10_000, 2)?;
            Ok((gap < 1e-10 && min >= 0.0, format!("closed-form gap {gap:.1e}, min KL {min:.3e}")))
        }),
        "interpolant" => judge("interpolant", || {
            let (ep, vel) = interpolant_checks(3)?;
            Ok((ep == 0.0 && vel < 1e-10, format!("endpoint error {ep:.1e}, velocity gap {vel:.1e}")))
        }),
        "euler" => judge("euler", || {
            let r = euler_ratios()?;
            let ok = r.iter().all(|v| (1.7..=2.3).contains(v));
            Ok((ok, format!("error ratios {:?}", r.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>())))
        }),
        "gradcheck" => judge("gradcheck", || {
            let a = vae_gradcheck(4)?.max_rel_error;
            let b = flow_gradcheck(5, TargetKind::Endpoint)?.max_rel_error;
            let c = flow_gradcheck(6, TargetKind::Conditional)?.max_rel_error;
            let worst = a.max(b).max(c);
            Ok((worst < 1e-4, format!("max rel error vae {a:.1e}, flow {b:.1e}/{c:.1e}")))
        }),
        "split" => judge("split", || Ok(listing(split_checks(7)?))),
        "metrics" => judge("metrics", || Ok(listing(metric_checks()?))),
        _ => return None,
    };
    Some(r)
}

/// Every suite in [`SUITES`] order with `fuse` as the PoE under test.
pub fn run_suites_with(fuse: FuseFn) -> Vec<SuiteResult> {
    SUITES.iter().map(|n| run_suite(n, fuse).expect("known suite")).collect()
}

pub fn run_suites() -> Vec<SuiteResult> {
    run_suites_with(poe_fuse)
}

pub fn render(results: &[SuiteResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&format!(
            "{:<12} {}  {}  ({:.2}s)\n",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.detail,
            r.seconds
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    /// Precisions averaged instead of summed.
    fn averaged_poe(experts: &[GaussianPosterior], include_prior: bool) -> Result<GaussianPosterior> {
        let mut prec: Vec<Tensor> = experts.iter().map(GaussianPosterior::precision).collect();
        let mut means: Vec<Tensor> = experts.iter().map(|e| e.mu.clone()).collect();
        if include_prior {
            let d = experts.first().ok_or_else(|| Error::contract("empty"))?.dim();
            prec.push(Tensor::full(&[d], 1.0));
            means.push(Tensor::zeros(&[d]));
        }
        let k = prec.len() as f64;
        let d = prec[0].len();
        let mut mu = vec![0.0; d];
        let mut lv = vec![0.0; d];
        for j in 0..d {
            let total: f64 = prec.iter().map(|p| p.data()[j]).sum();
            mu[j] = prec.iter().zip(&means).map(|(p, m)| p.data()[j] * m.data()[j]).sum::<f64>() / total;
            lv[j] = -(total / k).ln();
        }
        GaussianPosterior::new(Tensor::vector(mu)?, Tensor::vector(lv)?)
    }

    #[test]
    fn every_suite_passes() {
        let r = run_suites();
        assert_eq!(r.iter().map(|s| s.name).collect::<Vec<_>>(), SUITES.to_vec());
        assert!(r.iter().all(|s| s.passed), "{}", render(&r));
    }

    #[test]
    fn averaged_precision_fails_the_poe_suite() {
        let r = run_suite("poe", averaged_poe).unwrap();
        assert!(!r.passed, "{}", r.detail);
        assert!(run_suite("nope", poe_fuse).is_none());
    }
}
