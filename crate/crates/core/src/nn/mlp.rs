use serde::{Deserialize, Serialize};

use super::Module;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Activation::Tanh),
            1 => Ok(Activation::Relu),
            _ => Err(Error::Format(format!("unknown activation code {c}"))),
        }
    }

    fn apply(self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.relu(x),
        }
    }
}

/// One affine map: `weight` is `[out, in]`, `bias` is `[out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// Affine layers with `activation` between them and none after the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    activation: Activation,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init(rng: &mut Rng, dims: &[usize], activation: Activation) -> Result<Self> {
        check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fin, fout) = (w[0], w[1]);
                let s = (6.0 / (fin + fout) as f64).sqrt();
                let data = (0..fin * fout).map(|_| rng.uniform_range(-s, s)).collect();
                Layer {
                    weight: Tensor::from_parts(vec![fout, fin], data),
                    bias: Tensor::zeros(&[fout]),
                }
            })
            .collect();
        Ok(Self { layers, activation })
    }

    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self> {
        check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| Layer {
                weight: Tensor::zeros(&[w[1], w[0]]),
                bias: Tensor::zeros(&[w[1]]),
            })
            .collect();
        Ok(Self { layers, activation })
    }

    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("an MLP needs at least one layer"));
        }
        for l in &layers {
            if l.weight.shape().len() != 2 || l.bias.shape() != [l.fan_out()] {
                return Err(Error::dim("mlp layer", l.weight.shape(), l.bias.shape()));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::dim("mlp chain", pair[0].weight.shape(), pair[1].weight.shape()));
            }
        }
        Ok(Self { layers, activation })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Layer sizes, input first.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].fan_in()];
        d.extend(self.layers.iter().map(Layer::fan_out));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    /// Wraps this network's slice of already bound parameter vars, returning
    /// the vars that were not consumed.
    pub fn attach<'a>(&self, vars: &'a [Var]) -> Result<(BoundMlp, &'a [Var])> {
        let n = 2 * self.layers.len();
        if vars.len() < n {
            return Err(Error::contract(format!(
                "MLP with {} layers needs {n} bound vars, got {}",
                self.layers.len(),
                vars.len()
            )));
        }
        let layers = vars[..n].chunks(2).map(|c| (c[0], c[1])).collect();
        Ok((
            BoundMlp {
                layers,
                activation: self.activation,
            },
            &vars[n..],
        ))
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundMlp {
        let vars = self.bind_params(g, trainable);
        self.attach(&vars).expect("own parameter count").0
    }

    /// Gradient-free evaluation on a `[in]` or `[batch, in]` input.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let net = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = net.forward(&mut g, xv)?;
        Ok(g.value(y).clone())
    }
}

impl Module for Mlp {
    fn parameters(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// An [`Mlp`] whose parameters live on a graph.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<(Var, Var)>,
    activation: Activation,
}

impl BoundMlp {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = g.linear(h, w, b)?;
            if i < last {
                h = self.activation.apply(g, h)?;
            }
        }
        Ok(h)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::contract(format!("MLP dims {dims:?}: need at least two sizes")));
    }
    if dims.contains(&0) {
        return Err(Error::contract(format!("MLP dims {dims:?} contain a zero extent")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_bound_and_zero_bias() {
        let mut rng = Rng::new(3);
        let net = Mlp::init(&mut rng, &[2, 2], Activation::Tanh).unwrap();
        let s = (6.0f64 / 4.0).sqrt();
        assert!(net.layers()[0].weight.data().iter().all(|w| w.abs() <= s));
        assert!(net.layers()[0].bias.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn init_is_deterministic() {
        let a = Mlp::init(&mut Rng::new(9), &[4, 8, 3], Activation::Relu).unwrap();
        let b = Mlp::init(&mut Rng::new(9), &[4, 8, 3], Activation::Relu).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_dims_are_rejected() {
        let mut rng = Rng::new(0);
        assert!(Mlp::init(&mut rng, &[3], Activation::Tanh).is_err());
        assert!(Mlp::init(&mut rng, &[3, 0, 2], Activation::Tanh).is_err());
    }

    #[test]
    fn zero_net_gives_zero_output() {
        let net = Mlp::zeros(&[3, 5, 2], Activation::Tanh).unwrap();
        let y = net.forward(&Tensor::vector(vec![1.0, -2.0, 0.5]).unwrap()).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer() {
        let layer = Layer {
            weight: Tensor::identity(3),
            bias: Tensor::zeros(&[3]),
        };
        let net = Mlp::from_layers(vec![layer], Activation::Tanh).unwrap();
        let x = Tensor::vector(vec![0.3, -7.0, 2.0]).unwrap();
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn two_layer_tanh_matches_hand_composition() {
        let mut rng = Rng::new(11);
        let net = Mlp::init(&mut rng, &[3, 4, 2], Activation::Tanh).unwrap();
        let x = [0.2, -0.4, 1.1];
        // hand evaluation with plain loops
        let l0 = &net.layers()[0];
        let l1 = &net.layers()[1];
        let h: Vec<f64> = (0..4)
            .map(|o| {
                let s: f64 = (0..3).map(|i| l0.weight.data()[o * 3 + i] * x[i]).sum();
                (s + l0.bias.data()[o]).tanh()
            })
            .collect();
        let want: Vec<f64> = (0..2)
            .map(|o| (0..4).map(|i| l1.weight.data()[o * 4 + i] * h[i]).sum::<f64>() + l1.bias.data()[o])
            .collect();
        let got = net.forward(&Tensor::vector(x.to_vec()).unwrap()).unwrap();
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn input_mismatch_is_a_dimension_error() {
        let net = Mlp::zeros(&[3, 2], Activation::Tanh).unwrap();
        let err = net.forward(&Tensor::vector(vec![1.0, 2.0]).unwrap());
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }
}
