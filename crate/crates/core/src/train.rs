//! Mini-batch training loop shared by every model in the crate.
//!
//! Each optimizer step consumes one effective batch, evaluated as a run of
//! micro-batches whose gradients are summed after scaling each micro loss by
//! its share of the batch. That makes the accumulated gradient equal to the
//! gradient of the batch-mean loss regardless of the micro-batch size.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{AdamW, AdamWConfig, LrSchedule, Module};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr: f64,
    pub epochs: u64,
    pub effective_batch: usize,
    pub micro_batch: usize,
    pub warmup_fraction: f64,
    pub adamw: AdamWConfig,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 200,
            effective_batch: 8,
            micro_batch: 2,
            warmup_fraction: 0.05,
            adamw: AdamWConfig::default(),
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {}", self.lr)));
        }
        if self.effective_batch == 0 || self.micro_batch == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.effective_batch % self.micro_batch != 0 {
            return Err(Error::Config(format!(
                "micro batch {} does not divide effective batch {}",
                self.micro_batch, self.effective_batch
            )));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(Error::Config(format!("warmup fraction {}", self.warmup_fraction)));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_samples: usize) -> u64 {
        n_samples.div_ceil(self.effective_batch) as u64
    }
}

/// What a loss closure hands back: the scalar to differentiate plus named
/// sub-terms for the history.
pub struct LossOutput {
    pub total: Var,
    pub terms: Vec<(&'static str, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub term_names: Vec<String>,
    /// Per epoch, the sample-weighted mean of every term.
    pub epochs: Vec<Vec<f64>>,
    pub steps: u64,
    /// Indices of every sample that entered a training batch.
    pub seen: BTreeSet<usize>,
}

impl TrainHistory {
    pub fn term(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.term_names.iter().position(|n| n == name)?;
        Some(self.epochs.iter().map(|e| e[k]).collect())
    }
}

/// Runs `cfg.epochs` passes over `n_samples` items. `loss` receives a fresh
/// graph, the model, its bound parameters (in [`Module::parameters`] order),
/// the sample indices of one micro-batch and the run's generator.
pub fn fit<M, F>(model: &mut M, n_samples: usize, cfg: &OptimConfig, rng: &mut Rng, mut loss: F) -> Result<TrainHistory>
where
    M: Module,
    F: FnMut(&mut Graph, &M, &[Var], &[usize], &mut Rng) -> Result<LossOutput>,
{
    cfg.validate()?;
    if n_samples == 0 {
        return Err(Error::contract("training set is empty"));
    }
    let mut history = TrainHistory::default();
    let total_steps = cfg.epochs * cfg.steps_per_epoch(n_samples);
    if total_steps == 0 {
        return Ok(history);
    }
    let schedule = LrSchedule::new(cfg.lr, total_steps, cfg.warmup_fraction)?;
    let mut opt = AdamW::new(&model.parameters(), cfg.adamw);
    let mut order: Vec<usize> = (0..n_samples).collect();
    let mut step = 0u64;

    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut sums: Vec<f64> = Vec::new();
        for batch in order.chunks(cfg.effective_batch) {
            let wrap = |e: Error| Error::Training {
                step,
                source: Box::new(e),
            };
            let mut grads: Vec<Tensor> = model.parameters().iter().map(|p| Tensor::zeros(p.shape())).collect();
            for micro in batch.chunks(cfg.micro_batch) {
                let mut g = Graph::new();
                let vars = model.bind_params(&mut g, true);
                let out = loss(&mut g, model, &vars, micro, rng).map_err(wrap)?;
                let v = g.value(out.total).item().map_err(wrap)?;
                if !v.is_finite() {
                    return Err(wrap(Error::NonFinite("training loss".into())));
                }
                let share = micro.len() as f64 / batch.len() as f64;
                let scaled = g.scale(out.total, share).map_err(wrap)?;
                g.backward(scaled).map_err(wrap)?;
                for (acc, v) in grads.iter_mut().zip(&vars) {
                    if let Some(gr) = g.grad(*v) {
                        for (a, b) in acc.data_mut().iter_mut().zip(gr.data()) {
                            *a += b;
                        }
                    }
                }
                if history.term_names.is_empty() {
                    history.term_names = out.terms.iter().map(|(n, _)| n.to_string()).collect();
                }
                sums.resize(out.terms.len(), 0.0);
                for (s, (_, t)) in sums.iter_mut().zip(&out.terms) {
                    *s += t * micro.len() as f64;
                }
                history.seen.extend(micro.iter().copied());
            }
            let lr = schedule.lr_at(step + 1).map_err(wrap)?;
            opt.step(&mut model.parameters_mut(), &grads, lr).map_err(wrap)?;
            step += 1;
        }
        history.epochs.push(sums.iter().map(|s| s / n_samples as f64).collect());
    }
    history.steps = step;
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Mlp};

    fn toy() -> (Mlp, Vec<Tensor>, Vec<Tensor>) {
        let mut rng = Rng::new(3);
        let net = Mlp::init(&mut rng, &[2, 4, 1], Activation::Tanh).unwrap();
        let xs: Vec<Tensor> = (0..12).map(|_| rng.normal_tensor(&[2])).collect();
        let ys = xs
            .iter()
            .map(|x| Tensor::vector(vec![0.5 * x.data()[0] - x.data()[1]]).unwrap())
            .collect();
        (net, xs, ys)
    }

    fn mse_loss<'a>(
        xs: &'a [Tensor],
        ys: &'a [Tensor],
    ) -> impl FnMut(&mut Graph, &Mlp, &[Var], &[usize], &mut Rng) -> Result<LossOutput> + 'a {
        move |g, net, vars, idx, _| {
            let bound = net.attach(vars)?.0;
            let x = g.constant(Tensor::stack_rows(&idx.iter().map(|&i| xs[i].clone()).collect::<Vec<_>>())?);
            let y = g.constant(Tensor::stack_rows(&idx.iter().map(|&i| ys[i].clone()).collect::<Vec<_>>())?);
            let p = bound.forward(g, x)?;
            let d = g.sub(p, y)?;
            let s = g.square(d)?;
            let total = g.mean(s)?;
            let v = g.value(total).item()?;
            Ok(LossOutput {
                total,
                terms: vec![("mse", v)],
            })
        }
    }

    fn cfg(epochs: u64) -> OptimConfig {
        OptimConfig {
            lr: 1e-2,
            epochs,
            effective_batch: 4,
            micro_batch: 2,
            ..OptimConfig::default()
        }
    }

    #[test]
    fn zero_epochs_leaves_parameters_alone() {
        let (mut net, xs, ys) = toy();
        let before = net.clone();
        let h = fit(&mut net, xs.len(), &cfg(0), &mut Rng::new(1), mse_loss(&xs, &ys)).unwrap();
        assert_eq!(net, before);
        assert_eq!(h.steps, 0);
    }

    #[test]
    fn loss_goes_down_and_runs_repeat() {
        let (mut a, xs, ys) = toy();
        let mut b = a.clone();
        let ha = fit(&mut a, xs.len(), &cfg(60), &mut Rng::new(1), mse_loss(&xs, &ys)).unwrap();
        fit(&mut b, xs.len(), &cfg(60), &mut Rng::new(1), mse_loss(&xs, &ys)).unwrap();
        assert_eq!(a, b);
        let mse = ha.term("mse").unwrap();
        assert!(mse.last().unwrap() < &mse[0]);
        assert_eq!(ha.steps, 60 * 3);
        assert_eq!(ha.seen.len(), 12);
    }

    #[test]
    fn micro_batch_size_does_not_change_the_update() {
        let (mut a, xs, ys) = toy();
        let mut b = a.clone();
        let ca = cfg(3);
        let cb = OptimConfig { micro_batch: 4, ..cfg(3) };
        fit(&mut a, xs.len(), &ca, &mut Rng::new(5), mse_loss(&xs, &ys)).unwrap();
        fit(&mut b, xs.len(), &cb, &mut Rng::new(5), mse_loss(&xs, &ys)).unwrap();
        for (p, q) in a.parameters().iter().zip(b.parameters()) {
            assert!(p.max_abs_diff(q).unwrap() < 1e-12);
        }
    }

    #[test]
    fn non_finite_loss_names_the_step() {
        let (mut net, xs, _) = toy();
        let err = fit(&mut net, xs.len(), &cfg(2), &mut Rng::new(1), |g, _, _, _, _| {
            let c = g.constant(Tensor::scalar(f64::NAN));
            Ok(LossOutput { total: c, terms: vec![] })
        });
        assert!(matches!(err, Err(Error::Training { step: 0, .. })));
    }

    #[test]
    fn bad_batch_config_is_rejected() {
        let c = OptimConfig {
            effective_batch: 8,
            micro_batch: 3,
            ..OptimConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
