//! Multimodal VAE: one Gaussian encoder per modality, product-of-experts
//! fusion with the unit prior, and a shared decoder that always emits every
//! modality.

mod mask;
mod posterior;

pub use mask::{Mask, MaskScheme};
pub use posterior::{
    loss_kl, loss_kl_vars, poe_fuse, poe_fuse_vars, reparameterize, sample_posterior, sample_posterior_vars,
    GaussianPosterior, PosteriorVars, LOGVAR_CLAMP,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Activation, BoundMlp, Mlp, Module};
use crate::rng::Rng;
use crate::synth::FamilyData;
use crate::tensor::Tensor;
use crate::train::{fit, LossOutput, OptimConfig, TrainHistory};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_pull: f64,
    pub beta_kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_pull: 1.0,
            beta_kl: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_pull", self.lambda_pull), ("beta_kl", self.beta_kl)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalVae {
    encoders: Vec<Mlp>,
    decoder: Mlp,
    image_shape: Vec<usize>,
}

impl MultimodalVae {
    /// Encoders `P → hidden… → 2d`, decoder `d → reversed hidden… → M·P`.
    pub fn init(
        rng: &mut Rng,
        modalities: usize,
        image_shape: &[usize],
        latent_dim: usize,
        hidden: &[usize],
        activation: Activation,
    ) -> Result<Self> {
        if modalities == 0 || latent_dim == 0 {
            return Err(Error::contract("a VAE needs at least one modality and one latent dimension"));
        }
        let p: usize = image_shape.iter().product();
        let mut enc_dims = vec![p];
        enc_dims.extend_from_slice(hidden);
        enc_dims.push(2 * latent_dim);
        let encoders = (0..modalities)
            .map(|_| Mlp::init(rng, &enc_dims, activation))
            .collect::<Result<Vec<_>>>()?;
        let mut dec_dims = vec![latent_dim];
        dec_dims.extend(hidden.iter().rev());
        dec_dims.push(modalities * p);
        let decoder = Mlp::init(rng, &dec_dims, activation)?;
        Self::from_parts(encoders, decoder, image_shape.to_vec())
    }

    pub fn from_parts(encoders: Vec<Mlp>, decoder: Mlp, image_shape: Vec<usize>) -> Result<Self> {
        let p: usize = image_shape.iter().product();
        let first = encoders.first().ok_or_else(|| Error::contract("a VAE needs at least one encoder"))?;
        let two_d = first.output_dim();
        if two_d == 0 || two_d % 2 != 0 {
            return Err(Error::contract(format!("encoder output {two_d} is not 2·d")));
        }
        for e in &encoders {
            if e.input_dim() != p || e.output_dim() != two_d {
                return Err(Error::dim("vae encoder", &[p, two_d], &[e.input_dim(), e.output_dim()]));
            }
        }
        if decoder.input_dim() != two_d / 2 || decoder.output_dim() != encoders.len() * p {
            return Err(Error::dim(
                "vae decoder",
                &[two_d / 2, encoders.len() * p],
                &[decoder.input_dim(), decoder.output_dim()],
            ));
        }
        Ok(Self {
            encoders,
            decoder,
            image_shape,
        })
    }

    pub fn modalities(&self) -> usize {
        self.encoders.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.input_dim()
    }

    pub fn image_dim(&self) -> usize {
        self.image_shape.iter().product()
    }

    pub fn image_shape(&self) -> &[usize] {
        &self.image_shape
    }

    pub fn encoders(&self) -> &[Mlp] {
        &self.encoders
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn attach(&self, vars: &[Var]) -> Result<BoundVae> {
        let mut rest = vars;
        let mut encoders = Vec::with_capacity(self.encoders.len());
        for e in &self.encoders {
            let (b, r) = e.attach(rest)?;
            encoders.push(b);
            rest = r;
        }
        let (decoder, rest) = self.decoder.attach(rest)?;
        if !rest.is_empty() {
            return Err(Error::contract(format!("{} unused VAE parameter vars", rest.len())));
        }
        Ok(BoundVae {
            encoders,
            decoder,
            latent_dim: self.latent_dim(),
            image_dim: self.image_dim(),
        })
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundVae {
        let vars = self.bind_params(g, trainable);
        self.attach(&vars).expect("own parameter layout")
    }

    fn flat_image(&self, x: &Tensor) -> Result<Tensor> {
        if x.len() != self.image_dim() {
            return Err(Error::dim("vae input", &self.image_shape, x.shape()));
        }
        x.clone().reshape(vec![self.image_dim()])
    }

    pub fn encode_modality(&self, index: usize, x: &Tensor) -> Result<GaussianPosterior> {
        let mut g = Graph::new();
        let vae = self.bind(&mut g, false);
        let xv = g.constant(self.flat_image(x)?);
        let p = vae.encode(&mut g, index, xv)?;
        Ok(p.value(&g))
    }

    /// Per-modality posteriors of the observed images (`None` = missing).
    pub fn encode_each(&self, images: &[Option<&Tensor>]) -> Result<Vec<Option<GaussianPosterior>>> {
        if images.len() != self.modalities() {
            return Err(Error::contract(format!(
                "{} image slots for a {}-modality VAE",
                images.len(),
                self.modalities()
            )));
        }
        images
            .iter()
            .enumerate()
            .map(|(i, x)| x.map(|x| self.encode_modality(i, x)).transpose())
            .collect()
    }

    /// Fused posterior (prior included) of the observed images.
    pub fn encode_observed(&self, images: &[Option<&Tensor>]) -> Result<GaussianPosterior> {
        let experts: Vec<GaussianPosterior> = self.encode_each(images)?.into_iter().flatten().collect();
        if experts.is_empty() {
            return Err(Error::contract("no observed modality to encode"));
        }
        poe_fuse(&experts, true)
    }

    /// One image per modality, in model order.
    pub fn decode(&self, z: &Tensor) -> Result<Vec<Tensor>> {
        if z.len() != self.latent_dim() {
            return Err(Error::dim("decode", &[self.latent_dim()], z.shape()));
        }
        let flat = self.decoder.forward(&z.clone().reshape(vec![self.latent_dim()])?)?;
        self.split_images(&flat)
    }

    /// Cuts an `M·P` row into `M` images of [`Self::image_shape`].
    pub fn split_images(&self, flat: &Tensor) -> Result<Vec<Tensor>> {
        let p = self.image_dim();
        if flat.len() != p * self.modalities() {
            return Err(Error::dim("split images", &[p * self.modalities()], flat.shape()));
        }
        flat.data()
            .chunks(p)
            .map(|c| Tensor::new(self.image_shape.clone(), c.to_vec()))
            .collect()
    }
}

impl Module for MultimodalVae {
    fn parameters(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.encoders.iter().flat_map(|e| e.parameters()).collect();
        v.extend(self.decoder.parameters());
        v
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.encoders.iter_mut().flat_map(|e| e.parameters_mut()).collect();
        v.extend(self.decoder.parameters_mut());
        v
    }
}

/// A [`MultimodalVae`] placed on a graph.
#[derive(Clone, Debug)]
pub struct BoundVae {
    encoders: Vec<BoundMlp>,
    decoder: BoundMlp,
    latent_dim: usize,
    image_dim: usize,
}

impl BoundVae {
    pub fn modalities(&self) -> usize {
        self.encoders.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// Encoder `index` on `[batch, P]` (or `[P]`) input; log-variance is
    /// clamped to [`LOGVAR_CLAMP`].
    pub fn encode(&self, g: &mut Graph, index: usize, x: Var) -> Result<PosteriorVars> {
        let enc = self.encoders.get(index).ok_or_else(|| {
            Error::contract(format!("modality index {index} of {}", self.encoders.len()))
        })?;
        let h = enc.forward(g, x)?;
        let mu = g.slice_cols(h, 0, self.latent_dim)?;
        let raw = g.slice_cols(h, self.latent_dim, self.latent_dim)?;
        let logvar = g.clamp(raw, LOGVAR_CLAMP.0, LOGVAR_CLAMP.1)?;
        Ok(PosteriorVars { mu, logvar })
    }

    /// Encodes every modality of `x` (`[batch, M·P]`).
    pub fn encode_all(&self, g: &mut Graph, x: Var) -> Result<Vec<PosteriorVars>> {
        (0..self.modalities())
            .map(|i| {
                let xi = g.slice_cols(x, i * self.image_dim, self.image_dim)?;
                self.encode(g, i, xi)
            })
            .collect()
    }

    pub fn decode(&self, g: &mut Graph, z: Var) -> Result<Var> {
        self.decoder.forward(g, z)
    }
}

pub fn loss_rec_vars(g: &mut Graph, recon: Var, target: Var) -> Result<Var> {
    if g.value(recon).shape() != g.value(target).shape() {
        return Err(Error::dim("loss_rec", g.value(recon).shape(), g.value(target).shape()));
    }
    let d = g.sub(recon, target)?;
    let s = g.square(d)?;
    g.mean(s)
}

/// Mean squared distance to a stop-gradient copy of `z_full`.
pub fn loss_pull_vars(g: &mut Graph, z_broken: Var, z_full: Var) -> Result<Var> {
    if g.value(z_broken).shape() != g.value(z_full).shape() {
        return Err(Error::dim("loss_pull", g.value(z_broken).shape(), g.value(z_full).shape()));
    }
    let target = g.detach(z_full);
    let d = g.sub(z_broken, target)?;
    let s = g.square(d)?;
    g.mean(s)
}

/// Mean squared error over all modalities.
pub fn loss_rec(recon: &[Tensor], target: &[Tensor]) -> Result<f64> {
    if recon.len() != target.len() {
        return Err(Error::dim("loss_rec", &[recon.len()], &[target.len()]));
    }
    let (mut acc, mut n) = (0.0, 0usize);
    for (r, t) in recon.iter().zip(target) {
        if r.shape() != t.shape() {
            return Err(Error::dim("loss_rec", r.shape(), t.shape()));
        }
        for (a, b) in r.data().iter().zip(t.data()) {
            acc += (a - b).powi(2);
        }
        n += r.len();
    }
    if n == 0 {
        return Err(Error::contract("loss_rec over empty images"));
    }
    Ok(acc / n as f64)
}

pub fn loss_pull(z_broken: &Tensor, z_full: &Tensor) -> Result<f64> {
    let d = z_broken.zip_map(z_full, |a, b| (a - b).powi(2))?;
    Ok(d.mean())
}

#[derive(Clone, Copy, Debug)]
pub struct VaeTerms {
    pub total: Var,
    pub rec: Var,
    pub pull: Var,
    pub kl: Var,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeLossBreakdown {
    pub total: f64,
    pub rec: f64,
    pub pull: f64,
    pub kl: f64,
}

/// The VAE objective on a batch `x` of fully observed rows `[B, M·P]`, with
/// one mask per row:
///
/// ```text
/// L = L_rec(D(z_m), x) + λ·L_pull(mu_m, sg(mu_full)) + β·Σ_i KL(q_i ‖ N(0, I))
/// ```
///
/// where `z_m` is one reparameterized draw from the masked PoE posterior.
pub fn vae_objective(
    g: &mut Graph,
    vae: &BoundVae,
    x: Var,
    masks: &[Mask],
    weights: &LossWeights,
    rng: &mut Rng,
) -> Result<VaeTerms> {
    vae_objective_with_target(g, vae, x, masks, weights, rng, None)
}

/// [`vae_objective`] with the stop-gradient pull target optionally pinned
/// to a fixed `[B, d]` value. Pinned at its own current value, the result
/// and its reverse-mode gradient are unchanged, but the function is now an
/// honest function of the parameters, so finite differences can check it.
pub fn vae_objective_with_target(
    g: &mut Graph,
    vae: &BoundVae,
    x: Var,
    masks: &[Mask],
    weights: &LossWeights,
    rng: &mut Rng,
    pull_target: Option<&Tensor>,
) -> Result<VaeTerms> {
    let (rows, _) = g.value(x).dims2()?;
    if masks.len() != rows {
        return Err(Error::contract(format!("{} masks for {rows} rows", masks.len())));
    }
    if let Some(m) = masks.iter().find(|m| m.len() != vae.modalities() || m.none_observed()) {
        return Err(Error::contract(format!("mask {m} is empty or has the wrong length")));
    }
    let d = vae.latent_dim();
    let experts = vae.encode_all(g, x)?;
    let full_in: Vec<(PosteriorVars, Option<Var>)> = experts.iter().map(|p| (*p, None)).collect();
    let full = poe_fuse_vars(g, &full_in, true)?;

    let shape = g.value(experts[0].mu).shape().to_vec();
    let mut broken_in = Vec::with_capacity(experts.len());
    for (i, p) in experts.iter().enumerate() {
        let w = Mask::column_weights(masks, i, d).reshape(shape.clone())?;
        broken_in.push((*p, Some(g.constant(w))));
    }
    let broken = poe_fuse_vars(g, &broken_in, true)?;

    let z = sample_posterior_vars(g, broken, rng)?;
    let recon = vae.decode(g, z)?;
    let rec = loss_rec_vars(g, recon, x)?;
    let target = match pull_target {
        Some(t) => g.constant(t.clone()),
        None => full.mu,
    };
    let pull = loss_pull_vars(g, broken.mu, target)?;
    let kl = loss_kl_vars(g, &experts)?;

    let wp = g.scale(pull, weights.lambda_pull)?;
    let wk = g.scale(kl, weights.beta_kl)?;
    let t = g.add(rec, wp)?;
    let total = g.add(t, wk)?;
    Ok(VaeTerms { total, rec, pull, kl })
}

/// Full-mask PoE means `[B, d]` of the rows of `x`; the value the pull
/// term is anchored to.
pub fn full_posterior_means(vae: &MultimodalVae, x: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let bound = vae.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let experts = bound.encode_all(&mut g, xv)?;
    let inputs: Vec<(PosteriorVars, Option<Var>)> = experts.into_iter().map(|p| (p, None)).collect();
    let full = poe_fuse_vars(&mut g, &inputs, true)?;
    Ok(g.value(full.mu).clone())
}

/// Value-level objective for one fully observed row `[M·P]`.
pub fn vae_total_loss(
    vae: &MultimodalVae,
    row: &Tensor,
    mask: &Mask,
    weights: &LossWeights,
    rng: &mut Rng,
) -> Result<VaeLossBreakdown> {
    let mut g = Graph::new();
    let bound = vae.bind(&mut g, false);
    let x = g.constant(row.clone().reshape(vec![1, row.len()])?);
    let t = vae_objective(&mut g, &bound, x, std::slice::from_ref(mask), weights, rng)?;
    Ok(VaeLossBreakdown {
        total: g.value(t.total).item()?,
        rec: g.value(t.rec).item()?,
        pull: g.value(t.pull).item()?,
        kl: g.value(t.kl).item()?,
    })
}

/// Trains on every row of `data` with one uniformly drawn non-empty mask
/// per sample per step. History terms: `total`, `rec`, `pull`, `kl`.
pub fn train_vae(
    vae: &mut MultimodalVae,
    data: &FamilyData,
    weights: &LossWeights,
    optim: &OptimConfig,
    rng: &mut Rng,
) -> Result<TrainHistory> {
    weights.validate()?;
    if data.modalities() != vae.modalities() || data.image_dim() != vae.image_dim() {
        return Err(Error::dim(
            "train_vae",
            &[vae.modalities(), vae.image_dim()],
            &[data.modalities(), data.image_dim()],
        ));
    }
    fit(vae, data.len(), optim, rng, |g, model, vars, idx, rng| {
        let bound = model.attach(vars)?;
        let rows: Vec<Tensor> = idx.iter().map(|&i| data.rows[i].clone()).collect();
        let x = g.constant(Tensor::stack_rows(&rows)?);
        let masks = idx
            .iter()
            .map(|_| Mask::sample(rng, model.modalities(), MaskScheme::UniformNonempty))
            .collect::<Result<Vec<_>>>()?;
        let t = vae_objective(g, &bound, x, &masks, weights, rng)?;
        let v = |g: &Graph, x: Var| g.value(x).item();
        Ok(LossOutput {
            total: t.total,
            terms: vec![
                ("total", v(g, t.total)?),
                ("rec", v(g, t.rec)?),
                ("pull", v(g, t.pull)?),
                ("kl", v(g, t.kl)?),
            ],
        })
    })
}

#[cfg(test)]
mod tests;
