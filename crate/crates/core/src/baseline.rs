//! Zero-substitution direct regressor: missing modalities are filled with
//! zeros, the mask is appended, and one MLP predicts the full study.

use crate::error::{Error, Result};
use crate::flow::Imputation;
use crate::graph::Var;
use crate::mmvae::{loss_rec_vars, Mask, MaskScheme};
use crate::nn::{Activation, Mlp, Module};
use crate::rng::Rng;
use crate::synth::FamilyData;
use crate::tensor::Tensor;
use crate::train::{fit, LossOutput, OptimConfig, TrainHistory};

#[derive(Clone, Debug, PartialEq)]
pub struct DirectRegressor {
    net: Mlp,
    modalities: usize,
    image_shape: Vec<usize>,
}

impl DirectRegressor {
    /// `M·P + M → hidden… → M·P`.
    pub fn init(
        rng: &mut Rng,
        modalities: usize,
        image_shape: &[usize],
        hidden: &[usize],
        activation: Activation,
    ) -> Result<Self> {
        let p: usize = image_shape.iter().product();
        let mut dims = vec![modalities * p + modalities];
        dims.extend_from_slice(hidden);
        dims.push(modalities * p);
        Self::from_mlp(Mlp::init(rng, &dims, activation)?, modalities, image_shape.to_vec())
    }

    pub fn from_mlp(net: Mlp, modalities: usize, image_shape: Vec<usize>) -> Result<Self> {
        let p: usize = image_shape.iter().product();
        if net.input_dim() != modalities * (p + 1) || net.output_dim() != modalities * p {
            return Err(Error::dim(
                "direct regressor",
                &[modalities * (p + 1), modalities * p],
                &[net.input_dim(), net.output_dim()],
            ));
        }
        Ok(Self {
            net,
            modalities,
            image_shape,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn modalities(&self) -> usize {
        self.modalities
    }

    pub fn image_shape(&self) -> &[usize] {
        &self.image_shape
    }

    fn image_dim(&self) -> usize {
        self.image_shape.iter().product()
    }
}

impl Module for DirectRegressor {
    fn parameters(&self) -> Vec<&Tensor> {
        self.net.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.parameters_mut()
    }
}

/// `[x_1·m_1, …, x_M·m_M, m_1, …, m_M]` for a full row `[M·P]`.
pub fn direct_input(row: &Tensor, mask: &Mask) -> Result<Tensor> {
    let m = mask.len();
    if m == 0 || row.len() % m != 0 {
        return Err(Error::dim("direct input", &[m], row.shape()));
    }
    let p = row.len() / m;
    let mut data = Vec::with_capacity(row.len() + m);
    for (i, chunk) in row.data().chunks(p).enumerate() {
        if mask.is_observed(i) {
            data.extend_from_slice(chunk);
        } else {
            data.extend(std::iter::repeat_n(0.0, p));
        }
    }
    data.extend(mask.observed().iter().map(|&b| if b { 1.0 } else { 0.0 }));
    Tensor::vector(data)
}

fn row_from_slots(images: &[Option<&Tensor>], p: usize) -> Result<(Tensor, Mask)> {
    let mut data = Vec::with_capacity(images.len() * p);
    for x in images {
        match x {
            Some(x) if x.len() == p => data.extend_from_slice(x.data()),
            Some(x) => return Err(Error::dim("direct predict", &[p], x.shape())),
            None => data.extend(std::iter::repeat_n(0.0, p)),
        }
    }
    let mask = Mask::new(images.iter().map(Option::is_some).collect());
    Ok((Tensor::vector(data)?, mask))
}

/// Same optimizer, schedule and mask distribution as the VAE. History
/// term: `mse`.
pub fn train_direct(
    model: &mut DirectRegressor,
    data: &FamilyData,
    optim: &OptimConfig,
    rng: &mut Rng,
) -> Result<TrainHistory> {
    if data.modalities() != model.modalities || data.image_dim() != model.image_dim() {
        return Err(Error::dim(
            "train_direct",
            &[model.modalities, model.image_dim()],
            &[data.modalities(), data.image_dim()],
        ));
    }
    fit(model, data.len(), optim, rng, |g, m, vars, idx, rng| {
        let (net, _) = m.net.attach(vars)?;
        let mut inputs = Vec::with_capacity(idx.len());
        let mut targets = Vec::with_capacity(idx.len());
        for &i in idx {
            let mask = Mask::sample(rng, m.modalities, MaskScheme::UniformNonempty)?;
            inputs.push(direct_input(&data.rows[i], &mask)?);
            targets.push(data.rows[i].clone());
        }
        let x = g.constant(Tensor::stack_rows(&inputs)?);
        let y = g.constant(Tensor::stack_rows(&targets)?);
        let pred: Var = net.forward(g, x)?;
        let total = loss_rec_vars(g, pred, y)?;
        let v = g.value(total).item()?;
        Ok(LossOutput {
            total,
            terms: vec![("mse", v)],
        })
    })
}

/// Predicts every modality from the observed slots of `images`.
pub fn predict_direct(model: &DirectRegressor, images: &[Option<&Tensor>]) -> Result<Imputation> {
    if images.len() != model.modalities {
        return Err(Error::contract(format!(
            "{} image slots for a {}-modality regressor",
            images.len(),
            model.modalities
        )));
    }
    let (row, mask) = row_from_slots(images, model.image_dim())?;
    if mask.none_observed() {
        return Err(Error::contract("no observed modality"));
    }
    let out = model.net.forward(&direct_input(&row, &mask)?)?;
    let decoded = out
        .data()
        .chunks(model.image_dim())
        .map(|c| Tensor::new(model.image_shape.clone(), c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Imputation::composite(decoded, images))
}
