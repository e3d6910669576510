use super::*;
use crate::gradcheck::finite_diff_check;
use crate::nn::Layer;

fn tiny(seed: u64) -> MultimodalVae {
    MultimodalVae::init(&mut Rng::new(seed), 2, &[4], 2, &[8], Activation::Tanh).unwrap()
}

fn row(seed: u64, n: usize) -> Tensor {
    let mut rng = Rng::new(seed);
    Tensor::vector((0..n).map(|_| rng.uniform()).collect()).unwrap()
}

#[test]
fn zero_encoder_gives_unit_gaussian() {
    let enc = Mlp::zeros(&[4, 3, 4], Activation::Tanh).unwrap();
    let dec = Mlp::zeros(&[2, 8], Activation::Tanh).unwrap();
    let vae = MultimodalVae::from_parts(vec![enc.clone(), enc], dec, vec![2, 2]).unwrap();
    let x = Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let p = vae.encode_modality(1, &x).unwrap();
    assert_eq!(p, GaussianPosterior::standard(2));
    assert_eq!(vae.encode_modality(0, &x).unwrap(), vae.encode_modality(0, &x).unwrap());
    assert!(vae.encode_modality(2, &x).is_err());
}

#[test]
fn one_layer_encoder_is_a_matmul() {
    let w = Tensor::matrix(2, 2, vec![1.0, 2.0, -0.5, 0.25]).unwrap();
    let b = Tensor::vector(vec![0.1, -0.2]).unwrap();
    let enc = Mlp::from_layers(vec![Layer { weight: w, bias: b }], Activation::Relu).unwrap();
    let dec = Mlp::zeros(&[1, 2], Activation::Relu).unwrap();
    let vae = MultimodalVae::from_parts(vec![enc], dec, vec![2]).unwrap();
    let p = vae.encode_modality(0, &Tensor::vector(vec![3.0, 4.0]).unwrap()).unwrap();
    assert_eq!(p.mu.data(), &[3.0 + 8.0 + 0.1]);
    assert_eq!(p.logvar.data(), &[-1.5 + 1.0 - 0.2]);
}

#[test]
fn logvar_is_clamped() {
    let w = Tensor::matrix(2, 1, vec![0.0, 100.0]).unwrap();
    let enc = Mlp::from_layers(vec![Layer { weight: w, bias: Tensor::zeros(&[2]) }], Activation::Relu).unwrap();
    let dec = Mlp::zeros(&[1, 1], Activation::Relu).unwrap();
    let vae = MultimodalVae::from_parts(vec![enc], dec, vec![1]).unwrap();
    assert_eq!(vae.encode_modality(0, &Tensor::vector(vec![1.0]).unwrap()).unwrap().logvar.data(), &[10.0]);
    assert_eq!(vae.encode_modality(0, &Tensor::vector(vec![-1.0]).unwrap()).unwrap().logvar.data(), &[-10.0]);
}

#[test]
fn decoder_outputs() {
    let enc = Mlp::zeros(&[3, 2], Activation::Tanh).unwrap();
    let dec0 = Mlp::zeros(&[1, 9], Activation::Tanh).unwrap();
    let vae = MultimodalVae::from_parts(vec![enc.clone(), enc.clone(), enc.clone()], dec0, vec![3]).unwrap();
    let out = vae.decode(&Tensor::vector(vec![0.7]).unwrap()).unwrap();
    assert_eq!(out.len(), 3);
    assert!(out.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));

    let w = Tensor::matrix(9, 1, (1..=9).map(f64::from).collect()).unwrap();
    let b = Tensor::vector(vec![0.5; 9]).unwrap();
    let dec = Mlp::from_layers(vec![Layer { weight: w, bias: b }], Activation::Tanh).unwrap();
    let vae = MultimodalVae::from_parts(vec![enc.clone(), enc.clone(), enc], dec, vec![3]).unwrap();
    let out = vae.decode(&Tensor::vector(vec![2.0]).unwrap()).unwrap();
    assert_eq!(out[1].data(), &[8.5, 10.5, 12.5]);
}

#[test]
fn reconstruction_and_pull_values() {
    let t = vec![row(1, 5), row(2, 5)];
    assert_eq!(loss_rec(&t, &t).unwrap(), 0.0);
    let shifted: Vec<Tensor> = t.iter().map(|x| x.map(|v| v + 0.1)).collect();
    assert!((loss_rec(&shifted, &t).unwrap() - 0.01).abs() < 1e-15);
    let (a, b) = (row(3, 7), row(4, 7));
    let mut want = 0.0;
    for i in 0..7 {
        want += (a.data()[i] - b.data()[i]).powi(2);
    }
    assert!((loss_rec(&[a.clone()], &[b.clone()]).unwrap() - want / 7.0).abs() < 1e-15);
    assert!(loss_rec(&[a], &[row(1, 3)]).is_err());

    let z0 = Tensor::vector(vec![0.0, 0.0]).unwrap();
    let z1 = Tensor::vector(vec![1.0, 1.0]).unwrap();
    assert_eq!(loss_pull(&z0, &z1).unwrap(), 1.0);
    assert_eq!(loss_pull(&z1, &z1).unwrap(), 0.0);
}

#[test]
fn pull_has_no_gradient_through_the_full_latent() {
    let mut g = Graph::new();
    let zb = g.param(Tensor::vector(vec![0.2, -0.4]).unwrap());
    let zf = g.param(Tensor::vector(vec![1.0, 1.0]).unwrap());
    let l = loss_pull_vars(&mut g, zb, zf).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad_or_zeros(zf).data(), &[0.0, 0.0]);
    assert!(g.grad_or_zeros(zb).data().iter().all(|&v| v != 0.0));
}

#[test]
fn weight_zeroing_and_full_mask() {
    let vae = tiny(1);
    let x = row(9, 8);
    let none = LossWeights {
        lambda_pull: 0.0,
        beta_kl: 0.0,
    };
    let l = vae_total_loss(&vae, &x, &Mask::new(vec![true, false]), &none, &mut Rng::new(2)).unwrap();
    assert_eq!(l.total, l.rec);
    let full = vae_total_loss(&vae, &x, &Mask::full(2), &LossWeights::default(), &mut Rng::new(2)).unwrap();
    assert_eq!(full.pull, 0.0);
    assert!(vae_total_loss(&vae, &x, &Mask::new(vec![false, false]), &none, &mut Rng::new(2)).is_err());
}

#[test]
fn objective_gradient_matches_finite_differences() {
    let vae = tiny(2);
    let x = Tensor::stack_rows(&[row(5, 8), row(6, 8)]).unwrap();
    let masks = vec![Mask::new(vec![true, false]), Mask::new(vec![false, true])];
    let params: Vec<Tensor> = vae.parameters().into_iter().cloned().collect();
    let weights = LossWeights {
        lambda_pull: 0.7,
        beta_kl: 0.3,
    };
    let anchor = full_posterior_means(&vae, &x).unwrap();
    let r = finite_diff_check(&params, 1e-5, |g, vars| {
        let bound = vae.attach(vars)?;
        let xv = g.constant(x.clone());
        Ok(vae_objective_with_target(g, &bound, xv, &masks, &weights, &mut Rng::new(77), Some(&anchor))?.total)
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn pinned_target_leaves_value_and_gradient_unchanged() {
    let vae = tiny(4);
    let x = Tensor::stack_rows(&[row(8, 8), row(9, 8)]).unwrap();
    let masks = vec![Mask::new(vec![true, false]), Mask::new(vec![false, true])];
    let anchor = full_posterior_means(&vae, &x).unwrap();
    let run = |pin: Option<&Tensor>| {
        let mut g = Graph::new();
        let vars = vae.bind_params(&mut g, true);
        let bound = vae.attach(&vars).unwrap();
        let xv = g.constant(x.clone());
        let t = vae_objective_with_target(&mut g, &bound, xv, &masks, &LossWeights::default(), &mut Rng::new(3), pin)
            .unwrap();
        g.backward(t.total).unwrap();
        let grads: Vec<Tensor> = vars.iter().map(|v| g.grad_or_zeros(*v)).collect();
        (g.value(t.total).item().unwrap(), grads)
    };
    let (live, pinned) = (run(None), run(Some(&anchor)));
    assert_eq!(live.0, pinned.0);
    for (a, b) in live.1.iter().zip(&pinned.1) {
        assert!(a.max_abs_diff(b).unwrap() < 1e-15);
    }
}

#[test]
fn stop_gradient_isolates_the_unobserved_encoder() {
    let vae = tiny(3);
    let x = Tensor::stack_rows(&[row(7, 8)]).unwrap();
    let masks = vec![Mask::new(vec![true, false])];
    let grads = |lambda: f64| {
        let mut g = Graph::new();
        let vars = vae.bind_params(&mut g, true);
        let bound = vae.attach(&vars).unwrap();
        let xv = g.constant(x.clone());
        let w = LossWeights {
            lambda_pull: lambda,
            beta_kl: 0.01,
        };
        let t = vae_objective(&mut g, &bound, xv, &masks, &w, &mut Rng::new(1)).unwrap();
        g.backward(t.total).unwrap();
        vars.iter().map(|v| g.grad_or_zeros(*v)).collect::<Vec<_>>()
    };
    let (a, b) = (grads(0.0), grads(5.0));
    let n_enc = vae.encoders()[1].parameters().len();
    let second = vae.encoders()[0].parameters().len();
    for k in second..second + n_enc {
        assert_eq!(a[k], b[k], "parameter {k}");
    }
    assert_ne!(a[0], b[0]);
}

fn family_rows(n: usize) -> FamilyData {
    use crate::synth::{generate_study, Family, OrganClass, PhantomConfig, PhantomSpec};
    let classes = OrganClass::defaults();
    let mut rng = Rng::new(12);
    let studies: Vec<_> = (0..n)
        .map(|i| {
            let spec = PhantomSpec::sample(&mut rng, &PhantomConfig::default(), &classes[0]).unwrap();
            generate_study(&mut rng, &spec, Family::CtPair, 0, format!("s{i}")).unwrap()
        })
        .collect();
    FamilyData::from_studies(Family::CtPair, &studies).unwrap()
}

#[test]
fn training_is_deterministic_and_zero_epochs_is_a_no_op() {
    let data = family_rows(8);
    let init = MultimodalVae::init(&mut Rng::new(1), 2, &data.image_shape, 4, &[16], Activation::Tanh).unwrap();
    let cfg = OptimConfig {
        epochs: 0,
        lr: 1e-3,
        ..OptimConfig::default()
    };
    let mut v = init.clone();
    train_vae(&mut v, &data, &LossWeights::default(), &cfg, &mut Rng::new(2)).unwrap();
    assert_eq!(v, init);

    let cfg = OptimConfig { epochs: 30, ..cfg };
    let (mut a, mut b) = (init.clone(), init);
    let ha = train_vae(&mut a, &data, &LossWeights::default(), &cfg, &mut Rng::new(2)).unwrap();
    train_vae(&mut b, &data, &LossWeights::default(), &cfg, &mut Rng::new(2)).unwrap();
    assert_eq!(a, b);
    let rec = ha.term("rec").unwrap();
    assert!(rec.last().unwrap() < &rec[0]);
}
