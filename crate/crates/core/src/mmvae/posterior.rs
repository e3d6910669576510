use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Bounds applied to every encoder log-variance so precisions stay finite.
pub const LOGVAR_CLAMP: (f64, f64) = (-10.0, 10.0);

/// Diagonal Gaussian `N(mu, exp(logvar))`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior {
    pub mu: Tensor,
    pub logvar: Tensor,
}

impl GaussianPosterior {
    pub fn new(mu: Tensor, logvar: Tensor) -> Result<Self> {
        if mu.shape() != logvar.shape() {
            return Err(Error::dim("posterior", mu.shape(), logvar.shape()));
        }
        Ok(Self { mu, logvar })
    }

    /// The prior `N(0, I)` over `d` dimensions.
    pub fn standard(d: usize) -> Self {
        Self {
            mu: Tensor::zeros(&[d]),
            logvar: Tensor::zeros(&[d]),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn variance(&self) -> Tensor {
        self.logvar.map(f64::exp)
    }

    pub fn precision(&self) -> Tensor {
        self.logvar.map(|l| (-l).exp())
    }

    /// Density of coordinate `k` at `x`.
    pub fn density(&self, k: usize, x: f64) -> f64 {
        let (mu, var) = (self.mu.data()[k], self.logvar.data()[k].exp());
        (-(x - mu).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    }
}

/// A posterior whose mean and log-variance live on a graph.
#[derive(Clone, Copy, Debug)]
pub struct PosteriorVars {
    pub mu: Var,
    pub logvar: Var,
}

impl PosteriorVars {
    pub fn constant(g: &mut Graph, p: &GaussianPosterior) -> Self {
        Self {
            mu: g.constant(p.mu.clone()),
            logvar: g.constant(p.logvar.clone()),
        }
    }

    pub fn value(&self, g: &Graph) -> GaussianPosterior {
        GaussianPosterior {
            mu: g.value(self.mu).clone(),
            logvar: g.value(self.logvar).clone(),
        }
    }
}

/// Product of Gaussian experts, optionally times the unit prior.
///
/// ```text
/// precision = [prior] + Σ_m w_m · exp(−logvar_m)
/// mu        = Σ_m w_m · mu_m · exp(−logvar_m) / precision
/// logvar    = −log(precision)
/// ```
///
/// `w_m` is an optional same-shape 0/1 weight per expert, which lets one
/// call fuse a batch whose rows observe different subsets.
pub fn poe_fuse_vars(g: &mut Graph, experts: &[(PosteriorVars, Option<Var>)], include_prior: bool) -> Result<PosteriorVars> {
    if experts.is_empty() {
        return Err(Error::contract("product of experts over an empty set"));
    }
    let mut precision: Option<Var> = None;
    let mut weighted: Option<Var> = None;
    for (p, w) in experts {
        let neg = g.scale(p.logvar, -1.0)?;
        let mut prec = g.exp(neg)?;
        if let Some(w) = w {
            prec = g.mul(prec, *w)?;
        }
        let num = g.mul(p.mu, prec)?;
        precision = Some(match precision {
            Some(acc) => g.add(acc, prec)?,
            None => prec,
        });
        weighted = Some(match weighted {
            Some(acc) => g.add(acc, num)?,
            None => num,
        });
    }
    let mut precision = precision.expect("non-empty");
    if include_prior {
        precision = g.add_const(precision, 1.0)?;
    }
    let mu = g.div(weighted.expect("non-empty"), precision)?;
    let log_prec = g.log(precision)?;
    let logvar = g.scale(log_prec, -1.0)?;
    Ok(PosteriorVars { mu, logvar })
}

/// Value-level [`poe_fuse_vars`] over unweighted experts.
pub fn poe_fuse(experts: &[GaussianPosterior], include_prior: bool) -> Result<GaussianPosterior> {
    if experts.is_empty() {
        if include_prior {
            return Err(Error::contract("prior-only fusion needs the latent dimension; use GaussianPosterior::standard"));
        }
        return Err(Error::contract("product of experts over an empty set without prior"));
    }
    let d = experts[0].mu.shape();
    if let Some(e) = experts.iter().find(|e| e.mu.shape() != d || e.logvar.shape() != d) {
        return Err(Error::dim("poe_fuse", d, e.mu.shape()));
    }
    let mut g = Graph::new();
    let vars: Vec<(PosteriorVars, Option<Var>)> = experts.iter().map(|e| (PosteriorVars::constant(&mut g, e), None)).collect();
    let out = poe_fuse_vars(&mut g, &vars, include_prior)?;
    Ok(out.value(&g))
}

/// `mu + exp(logvar / 2) ⊙ eps` with fresh `eps ~ N(0, I)`.
pub fn sample_posterior_vars(g: &mut Graph, p: PosteriorVars, rng: &mut Rng) -> Result<Var> {
    let eps = rng.normal_tensor(g.value(p.mu).shape());
    reparameterize(g, p, eps)
}

pub fn reparameterize(g: &mut Graph, p: PosteriorVars, eps: Tensor) -> Result<Var> {
    let e = g.constant(eps);
    let half = g.scale(p.logvar, 0.5)?;
    let sd = g.exp(half)?;
    let noise = g.mul(sd, e)?;
    g.add(p.mu, noise)
}

pub fn sample_posterior(p: &GaussianPosterior, rng: &mut Rng) -> Result<Tensor> {
    let eps = rng.normal_tensor(p.mu.shape());
    let noise = p.logvar.zip_map(&eps, |l, e| (0.5 * l).exp() * e)?;
    p.mu.zip_map(&noise, |m, n| m + n)
}

/// Σ over posteriors of the mean over elements of
/// `0.5·(mu² + exp(logvar) − logvar − 1)`, the closed-form
/// `KL(N(mu, σ²) ‖ N(0, 1))`.
pub fn loss_kl_vars(g: &mut Graph, posteriors: &[PosteriorVars]) -> Result<Var> {
    if posteriors.is_empty() {
        return Err(Error::contract("KL over zero posteriors"));
    }
    let mut total: Option<Var> = None;
    for p in posteriors {
        let mu2 = g.square(p.mu)?;
        let var = g.exp(p.logvar)?;
        let a = g.add(mu2, var)?;
        let b = g.sub(a, p.logvar)?;
        let c = g.add_const(b, -1.0)?;
        let m = g.mean(c)?;
        let term = g.scale(m, 0.5)?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    Ok(total.expect("non-empty"))
}

pub fn loss_kl(posteriors: &[GaussianPosterior]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<PosteriorVars> = posteriors.iter().map(|p| PosteriorVars::constant(&mut g, p)).collect();
    let v = loss_kl_vars(&mut g, &vars)?;
    g.value(v).item()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(mu: &[f64], var: &[f64]) -> GaussianPosterior {
        GaussianPosterior::new(
            Tensor::vector(mu.to_vec()).unwrap(),
            Tensor::vector(var.iter().map(|v| v.ln()).collect()).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn single_expert_with_prior() {
        let f = poe_fuse(&[post(&[2.0], &[1.0])], true).unwrap();
        assert!((f.mu.data()[0] - 1.0).abs() < 1e-15);
        assert!((f.variance().data()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identical_experts_keep_their_mean() {
        let e = post(&[0.7, -1.3], &[0.4, 2.0]);
        let f = poe_fuse(&[e.clone(), e], false).unwrap();
        assert!((f.mu.data()[0] - 0.7).abs() < 1e-14);
        assert!((f.mu.data()[1] + 1.3).abs() < 1e-14);
    }

    #[test]
    fn experts_equal_to_the_prior() {
        for k in 1..5 {
            let experts = vec![GaussianPosterior::standard(3); k];
            let f = poe_fuse(&experts, true).unwrap();
            for (&m, v) in f.mu.data().iter().zip(f.variance().data()) {
                assert_eq!(m, 0.0);
                assert!((v - 1.0 / (k as f64 + 1.0)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn empty_without_prior_is_an_error() {
        assert!(poe_fuse(&[], false).is_err());
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(loss_kl(&[GaussianPosterior::standard(4)]).unwrap(), 0.0);
        assert!((loss_kl(&[post(&[1.0], &[1.0])]).unwrap() - 0.5).abs() < 1e-15);
        let want = 0.5 * (2.0 - 2f64.ln() - 1.0);
        assert!((loss_kl(&[post(&[0.0], &[2.0])]).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_sample_is_the_mean() {
        let mut g = Graph::new();
        let p = PosteriorVars::constant(&mut g, &post(&[0.3, -0.2], &[1.5, 0.5]));
        let z = reparameterize(&mut g, p, Tensor::zeros(&[2])).unwrap();
        assert_eq!(g.value(z).data(), &[0.3, -0.2]);
    }

    #[test]
    fn tight_posterior_samples_near_mean() {
        let p = GaussianPosterior::new(Tensor::vector(vec![1.0; 8]).unwrap(), Tensor::full(&[8], -10.0)).unwrap();
        let mut rng = Rng::new(4);
        let mut probe = rng.clone();
        let z = sample_posterior(&p, &mut rng).unwrap();
        let eps = probe.normal_tensor(&[8]);
        for (zi, e) in z.data().iter().zip(eps.data()) {
            assert!((zi - 1.0).abs() <= 0.007 * e.abs() + 1e-15);
        }
    }

    #[test]
    fn unit_posterior_monte_carlo_mean() {
        let p = GaussianPosterior::standard(1);
        let mut rng = Rng::new(6);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| sample_posterior(&p, &mut rng).unwrap().data()[0]).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02);
    }
}
