//! Latent flow matching between the broken posterior mean of a partial
//! study and the full-study posterior mean, plus the imputation pipeline
//! (encode observed, integrate, decode).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::mmvae::{poe_fuse, sample_posterior, GaussianPosterior, Mask, MaskScheme, MultimodalVae};
use crate::nn::{Activation, BoundMlp, Mlp, Module};
use crate::rng::Rng;
use crate::synth::FamilyData;
use crate::tensor::Tensor;
use crate::train::{fit, LossOutput, OptimConfig, TrainHistory};

/// Conditional targets are undefined as `t → 1`; draws above this are
/// rejected.
pub const CONDITIONAL_T_MAX: f64 = 1.0 - 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterpolantConfig {
    pub sigma: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// `z1 − z0`.
    #[default]
    Endpoint,
    /// `(z1 − z_t) / (1 − t)`.
    Conditional,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Euler,
    EulerMaruyama,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub steps: usize,
    pub scheme: Scheme,
    pub noise_sigma: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            scheme: Scheme::Euler,
            noise_sigma: 0.0,
        }
    }
}

/// How flow endpoints are read off the frozen VAE.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentSource {
    #[default]
    PosteriorMean,
    Sampled,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowTrainConfig {
    pub interpolant: InterpolantConfig,
    pub target: TargetKind,
    pub latents: LatentSource,
}

/// `v(z, t)` as an MLP over `[z ‖ t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField {
    net: Mlp,
}

impl VelocityField {
    pub fn init(rng: &mut Rng, latent_dim: usize, hidden: &[usize], activation: Activation) -> Result<Self> {
        let mut dims = vec![latent_dim + 1];
        dims.extend_from_slice(hidden);
        dims.push(latent_dim);
        Ok(Self {
            net: Mlp::init(rng, &dims, activation)?,
        })
    }

    pub fn from_mlp(net: Mlp) -> Result<Self> {
        if net.input_dim() != net.output_dim() + 1 {
            return Err(Error::dim("velocity field", &[net.output_dim() + 1], &[net.input_dim()]));
        }
        Ok(Self { net })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn latent_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn attach(&self, vars: &[Var]) -> Result<BoundVelocity> {
        let (net, rest) = self.net.attach(vars)?;
        if !rest.is_empty() {
            return Err(Error::contract("unused velocity parameter vars"));
        }
        Ok(BoundVelocity { net })
    }
}

impl Module for VelocityField {
    fn parameters(&self) -> Vec<&Tensor> {
        self.net.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.parameters_mut()
    }
}

#[derive(Clone, Debug)]
pub struct BoundVelocity {
    net: BoundMlp,
}

impl BoundVelocity {
    /// `z` is `[B, d]`, `t` is `[B, 1]`.
    pub fn forward(&self, g: &mut Graph, z: Var, t: Var) -> Result<Var> {
        let input = g.concat_cols(&[z, t])?;
        self.net.forward(g, input)
    }
}

/// Anything that can be integrated.
pub trait VelocityModel {
    fn velocity(&self, z: &Tensor, t: f64) -> Result<Tensor>;
}

impl VelocityModel for VelocityField {
    fn velocity(&self, z: &Tensor, t: f64) -> Result<Tensor> {
        let mut input = z.data().to_vec();
        input.push(t);
        let out = self.net.forward(&Tensor::vector(input)?)?;
        out.reshape(z.shape().to_vec())
    }
}

/// Adapts a closure `(z, t) → v` into a [`VelocityModel`].
pub struct FnField<F>(pub F);

impl<F> VelocityModel for FnField<F>
where
    F: Fn(&Tensor, f64) -> Result<Tensor>,
{
    fn velocity(&self, z: &Tensor, t: f64) -> Result<Tensor> {
        (self.0)(z, t)
    }
}

/// One training pair: broken latent, full latent, and the mask behind `z0`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowPair {
    pub z0: Tensor,
    pub z1: Tensor,
    pub mask: Mask,
}

/// `(1−t)·z0 + t·z1 + σ·sqrt(t(1−t))·ε`. No noise is drawn when σ = 0.
pub fn interpolate(z0: &Tensor, z1: &Tensor, t: f64, cfg: &InterpolantConfig, rng: &mut Rng) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::contract(format!("interpolation time {t} outside [0, 1]")));
    }
    let line = z0.zip_map(z1, |a, b| (1.0 - t) * a + t * b)?;
    if cfg.sigma == 0.0 {
        return Ok(line);
    }
    let coef = cfg.sigma * (t * (1.0 - t)).sqrt();
    let eps = rng.normal_tensor(z0.shape());
    line.zip_map(&eps, |l, e| l + coef * e)
}

pub fn target_velocity_endpoint(z0: &Tensor, z1: &Tensor) -> Result<Tensor> {
    z1.zip_map(z0, |b, a| b - a)
}

pub fn target_velocity_conditional(z1: &Tensor, z_t: &Tensor, t: f64) -> Result<Tensor> {
    if !(0.0..=CONDITIONAL_T_MAX).contains(&t) {
        return Err(Error::Domain {
            op: "target_velocity_conditional",
            detail: format!("t = {t} is outside [0, 1 − 1e-6]"),
        });
    }
    z1.zip_map(z_t, |b, z| (b - z) / (1.0 - t))
}

/// Flow-matching loss on a batch: one `t ~ U(0, 1)` per pair (redrawn for
/// conditional targets until `t ≤ 1 − 1e-6`), mean of `(v(z_t, t) − target)²`.
pub fn lfm_loss_vars(
    g: &mut Graph,
    field: &BoundVelocity,
    pairs: &[FlowPair],
    rng: &mut Rng,
    cfg: &InterpolantConfig,
    kind: TargetKind,
) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::contract("flow-matching loss over an empty batch"));
    }
    let mut zs = Vec::with_capacity(pairs.len());
    let mut ts = Vec::with_capacity(pairs.len());
    let mut targets = Vec::with_capacity(pairs.len());
    for p in pairs {
        let mut t = rng.uniform();
        if kind == TargetKind::Conditional {
            while t > CONDITIONAL_T_MAX {
                t = rng.uniform();
            }
        }
        let z_t = interpolate(&p.z0, &p.z1, t, cfg, rng)?;
        targets.push(match kind {
            TargetKind::Endpoint => target_velocity_endpoint(&p.z0, &p.z1)?,
            TargetKind::Conditional => target_velocity_conditional(&p.z1, &z_t, t)?,
        });
        zs.push(z_t);
        ts.push(t);
    }
    let z = g.constant(Tensor::stack_rows(&zs)?);
    let t = g.constant(Tensor::matrix(ts.len(), 1, ts)?);
    let target = g.constant(Tensor::stack_rows(&targets)?);
    let v = field.forward(g, z, t)?;
    let d = g.sub(v, target)?;
    let s = g.square(d)?;
    g.mean(s)
}

pub fn lfm_loss(
    field: &VelocityField,
    pairs: &[FlowPair],
    rng: &mut Rng,
    cfg: &InterpolantConfig,
    kind: TargetKind,
) -> Result<f64> {
    let mut g = Graph::new();
    let vars = field.bind_params(&mut g, false);
    let bound = field.attach(&vars)?;
    let l = lfm_loss_vars(&mut g, &bound, pairs, rng, cfg, kind)?;
    g.value(l).item()
}

/// Euler (or Euler–Maruyama) from `t = 0` to `t = 1` in `cfg.steps` equal
/// steps.
pub fn integrate<V: VelocityModel + ?Sized>(
    field: &V,
    z0: &Tensor,
    cfg: &IntegratorConfig,
    rng: &mut Rng,
) -> Result<Tensor> {
    if cfg.steps == 0 {
        return Err(Error::contract("integration needs at least one step"));
    }
    if !(cfg.noise_sigma >= 0.0 && cfg.noise_sigma.is_finite()) {
        return Err(Error::contract(format!("noise sigma {}", cfg.noise_sigma)));
    }
    let dt = 1.0 / cfg.steps as f64;
    let mut z = z0.clone();
    for k in 0..cfg.steps {
        let t = k as f64 * dt;
        let v = field.velocity(&z, t)?;
        let mut next = z.zip_map(&v, |a, b| a + dt * b)?;
        if cfg.scheme == Scheme::EulerMaruyama && cfg.noise_sigma > 0.0 {
            let eps = rng.normal_tensor(z.shape());
            let c = cfg.noise_sigma * dt.sqrt();
            next = next.zip_map(&eps, |a, e| a + c * e)?;
        }
        if !next.all_finite() {
            return Err(Error::NonFinite(format!("integration step {k}")));
        }
        z = next;
    }
    Ok(z)
}

/// Trains `field` on pairs built from the frozen `vae`: for every sample, a
/// strict-subset mask gives `z0` (fused observed posterior) and the full
/// mask gives `z1`. History term: `lfm`.
pub fn train_flow(
    field: &mut VelocityField,
    vae: &MultimodalVae,
    data: &FamilyData,
    cfg: &FlowTrainConfig,
    optim: &OptimConfig,
    rng: &mut Rng,
) -> Result<TrainHistory> {
    if field.latent_dim() != vae.latent_dim() {
        return Err(Error::dim("train_flow", &[vae.latent_dim()], &[field.latent_dim()]));
    }
    if data.modalities() != vae.modalities() {
        return Err(Error::dim("train_flow", &[vae.modalities()], &[data.modalities()]));
    }
    let m = vae.modalities();
    let experts = data
        .rows
        .iter()
        .map(|row| {
            let images = vae.split_images(row)?;
            vae.encode_each(&images.iter().map(Some).collect::<Vec<_>>())
                .map(|v| v.into_iter().map(|p| p.expect("all observed")).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let full: Vec<GaussianPosterior> = experts.iter().map(|e| poe_fuse(e, true)).collect::<Result<_>>()?;

    fit(field, data.len(), optim, rng, |g, model, vars, idx, rng| {
        let bound = model.attach(vars)?;
        let mut pairs = Vec::with_capacity(idx.len());
        for &i in idx {
            let mask = Mask::sample(rng, m, MaskScheme::UniformStrictSubset)?;
            let observed: Vec<GaussianPosterior> = experts[i]
                .iter()
                .enumerate()
                .filter(|(k, _)| mask.is_observed(*k))
                .map(|(_, p)| p.clone())
                .collect();
            let broken = poe_fuse(&observed, true)?;
            let (z0, z1) = match cfg.latents {
                LatentSource::PosteriorMean => (broken.mu, full[i].mu.clone()),
                LatentSource::Sampled => (sample_posterior(&broken, rng)?, sample_posterior(&full[i], rng)?),
            };
            pairs.push(FlowPair { z0, z1, mask });
        }
        let total = lfm_loss_vars(g, &bound, &pairs, rng, &cfg.interpolant, cfg.target)?;
        let v = g.value(total).item()?;
        Ok(LossOutput {
            total,
            terms: vec![("lfm", v)],
        })
    })
}

/// Output of an imputation: raw model images and the same images with the
/// observed slots put back.
#[derive(Clone, Debug, PartialEq)]
pub struct Imputation {
    pub decoded: Vec<Tensor>,
    pub composited: Vec<Tensor>,
}

impl Imputation {
    pub(crate) fn composite(decoded: Vec<Tensor>, images: &[Option<&Tensor>]) -> Self {
        let composited = decoded
            .iter()
            .zip(images)
            .map(|(d, x)| match x {
                Some(x) => (*x).clone(),
                None => d.clone(),
            })
            .collect();
        Self { decoded, composited }
    }
}

/// Encodes the observed slots of `images`, transports the fused mean with
/// `field`, and decodes every modality.
pub fn impute<V: VelocityModel + ?Sized>(
    vae: &MultimodalVae,
    field: &V,
    images: &[Option<&Tensor>],
    cfg: &IntegratorConfig,
    rng: &mut Rng,
) -> Result<Imputation> {
    let z_m = vae.encode_observed(images)?.mu;
    let z_hat = integrate(field, &z_m, cfg, rng)?;
    let decoded = vae.decode(&z_hat)?;
    Ok(Imputation::composite(decoded, images))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_diff_check;
    use crate::nn::Layer;

    fn v(x: &[f64]) -> Tensor {
        Tensor::vector(x.to_vec()).unwrap()
    }

    #[test]
    fn interpolant_endpoints_and_midpoint() {
        let (z0, z1) = (v(&[0.3, -1.0]), v(&[2.0, 4.0]));
        let mut rng = Rng::new(1);
        for sigma in [0.0, 0.5] {
            let cfg = InterpolantConfig { sigma };
            assert_eq!(interpolate(&z0, &z1, 0.0, &cfg, &mut rng).unwrap(), z0);
            assert_eq!(interpolate(&z0, &z1, 1.0, &cfg, &mut rng).unwrap(), z1);
        }
        let mid = interpolate(&v(&[0.0]), &v(&[2.0]), 0.5, &InterpolantConfig::default(), &mut rng).unwrap();
        assert_eq!(mid.data(), &[1.0]);
        assert!(interpolate(&z0, &z1, 1.5, &InterpolantConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn velocity_targets() {
        let (z0, z1) = (v(&[0.0]), v(&[3.0]));
        assert_eq!(target_velocity_endpoint(&z0, &z1).unwrap().data(), &[3.0]);
        assert_eq!(target_velocity_endpoint(&z1, &z1).unwrap().data(), &[0.0]);
        assert_eq!(target_velocity_endpoint(&z1, &z0).unwrap().data(), &[-3.0]);
        assert_eq!(target_velocity_conditional(&z1, &z0, 0.0).unwrap().data(), &[3.0]);
        assert_eq!(target_velocity_conditional(&z1, &z1, 0.4).unwrap().data(), &[0.0]);
        assert!(target_velocity_conditional(&z1, &z0, 1.0).is_err());
        let a = v(&[0.5, -1.5]);
        let b = v(&[-2.0, 0.25]);
        let ep = target_velocity_endpoint(&a, &b).unwrap();
        for k in 1..10 {
            let t = k as f64 / 10.0;
            let zt = interpolate(&a, &b, t, &InterpolantConfig::default(), &mut Rng::new(0)).unwrap();
            let c = target_velocity_conditional(&b, &zt, t).unwrap();
            assert!(c.max_abs_diff(&ep).unwrap() < 1e-10);
        }
    }

    fn constant_field(d: usize, c: &[f64]) -> VelocityField {
        let layer = Layer {
            weight: Tensor::zeros(&[d, d + 1]),
            bias: v(c),
        };
        VelocityField::from_mlp(Mlp::from_layers(vec![layer], Activation::Tanh).unwrap()).unwrap()
    }

    #[test]
    fn loss_of_oracle_and_zero_fields() {
        let pairs: Vec<FlowPair> = (0..4)
            .map(|i| FlowPair {
                z0: v(&[i as f64, 0.5]),
                z1: v(&[i as f64 + 1.0, -0.5]),
                mask: Mask::new(vec![true, false]),
            })
            .collect();
        let oracle = constant_field(2, &[1.0, -1.0]);
        let cfg = InterpolantConfig::default();
        assert_eq!(lfm_loss(&oracle, &pairs, &mut Rng::new(1), &cfg, TargetKind::Endpoint).unwrap(), 0.0);

        let zero = constant_field(3, &[0.0; 3]);
        let unit = vec![FlowPair {
            z0: v(&[0.0; 3]),
            z1: v(&[1.0; 3]),
            mask: Mask::new(vec![true, false]),
        }];
        assert!((lfm_loss(&zero, &unit, &mut Rng::new(2), &cfg, TargetKind::Endpoint).unwrap() - 1.0).abs() < 1e-15);
        assert!(lfm_loss(&zero, &[], &mut Rng::new(2), &cfg, TargetKind::Endpoint).is_err());
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = Rng::new(3);
        let field = VelocityField::init(&mut rng, 2, &[8], Activation::Tanh).unwrap();
        let pairs: Vec<FlowPair> = (0..3)
            .map(|_| FlowPair {
                z0: rng.normal_tensor(&[2]),
                z1: rng.normal_tensor(&[2]),
                mask: Mask::new(vec![true, false]),
            })
            .collect();
        let params: Vec<Tensor> = field.parameters().into_iter().cloned().collect();
        for kind in [TargetKind::Endpoint, TargetKind::Conditional] {
            let r = finite_diff_check(&params, 1e-5, |g, vars| {
                let bound = field.attach(vars)?;
                lfm_loss_vars(g, &bound, &pairs, &mut Rng::new(9), &InterpolantConfig { sigma: 0.3 }, kind)
            })
            .unwrap();
            assert!(r.max_rel_error < 1e-4, "{kind:?}: {r:?}");
        }
    }

    #[test]
    fn euler_on_simple_fields() {
        let c = FnField(|z: &Tensor, _t: f64| Ok(Tensor::full(z.shape(), 0.7)));
        for n in [1, 3, 50] {
            let cfg = IntegratorConfig {
                steps: n,
                ..IntegratorConfig::default()
            };
            let z = integrate(&c, &v(&[1.0]), &cfg, &mut Rng::new(0)).unwrap();
            assert!((z.data()[0] - 1.7).abs() < 1e-12);
        }
        let grow = FnField(|z: &Tensor, _t: f64| Ok(z.clone()));
        let one = IntegratorConfig {
            steps: 1,
            ..IntegratorConfig::default()
        };
        assert_eq!(integrate(&grow, &v(&[1.0]), &one, &mut Rng::new(0)).unwrap().data(), &[2.0]);
        let err = |n: usize| {
            let cfg = IntegratorConfig {
                steps: n,
                ..IntegratorConfig::default()
            };
            (integrate(&grow, &v(&[1.0]), &cfg, &mut Rng::new(0)).unwrap().data()[0] - std::f64::consts::E).abs()
        };
        for n in [8, 16, 32] {
            let ratio = err(n) / err(2 * n);
            assert!((1.7..=2.3).contains(&ratio), "{n}: {ratio}");
        }
    }

    #[test]
    fn blow_up_names_the_step() {
        let bad = FnField(|z: &Tensor, _t: f64| Ok(z.map(|x| 1e300 * x + 1e300)));
        let cfg = IntegratorConfig {
            steps: 4,
            ..IntegratorConfig::default()
        };
        let err = integrate(&bad, &v(&[0.0]), &cfg, &mut Rng::new(0)).unwrap_err();
        assert!(err.to_string().contains("step 1"), "{err}");
    }

    #[test]
    fn euler_maruyama_adds_noise() {
        let zero = FnField(|z: &Tensor, _t: f64| Ok(Tensor::zeros(z.shape())));
        let cfg = IntegratorConfig {
            steps: 10,
            scheme: Scheme::EulerMaruyama,
            noise_sigma: 0.5,
        };
        let a = integrate(&zero, &v(&[0.0]), &cfg, &mut Rng::new(1)).unwrap();
        let b = integrate(&zero, &v(&[0.0]), &cfg, &mut Rng::new(1)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.data(), &[0.0]);
    }
}
