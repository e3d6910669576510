//! AdamW with a warmup-cosine schedule fitting a line.

use flowmi::nn::{AdamW, AdamWConfig, LrSchedule};
use flowmi::{Graph, Result, Tensor};

fn main() -> Result<()> {
    let xs: Vec<f64> = (0..20).map(|i| i as f64 / 10.0).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 1.0).collect();
    let x = Tensor::matrix(20, 1, xs)?;
    let y = Tensor::matrix(20, 1, ys)?;

    let mut w = Tensor::matrix(1, 1, vec![0.0])?;
    let mut b = Tensor::vector(vec![0.0])?;
    let steps = 400;
    let sched = LrSchedule::new(0.1, steps, 0.05)?;
    let mut opt = AdamW::new(
        &[&w, &b],
        AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        },
    );
    for step in 0..steps {
        let mut g = Graph::new();
        let (wv, bv) = (g.param(w.clone()), g.param(b.clone()));
        let (xv, yv) = (g.constant(x.clone()), g.constant(y.clone()));
        let pred = g.linear(xv, wv, bv)?;
        let d = g.sub(pred, yv)?;
        let sq = g.square(d)?;
        let loss = g.mean(sq)?;
        g.backward(loss)?;
        let grads = [g.grad_or_zeros(wv), g.grad_or_zeros(bv)];
        let lr = sched.lr_at(step + 1)?;
        opt.step(&mut [&mut w, &mut b], &grads, lr)?;
        if step % 100 == 0 || step == steps - 1 {
            println!("step {step:>3}  lr {lr:.4}  mse {:.6}", g.value(loss).item()?);
        }
    }
    println!("fit: y = {:.3}·x + {:.3}", w.data()[0], b.data()[0]);
    Ok(())
}
