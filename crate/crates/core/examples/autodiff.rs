//! Reverse-mode gradients of a small expression, checked against central
//! differences.

use flowmi::gradcheck::finite_diff_check;
use flowmi::{Graph, Result, Tensor};

fn main() -> Result<()> {
    // f(w, b) = mean(tanh(x·wᵀ + b)²)
    let x = Tensor::matrix(3, 2, vec![0.5, -1.0, 1.5, 0.2, -0.3, 0.8])?;
    let w = Tensor::matrix(2, 2, vec![0.1, -0.4, 0.7, 0.3])?;
    let b = Tensor::vector(vec![0.05, -0.1])?;

    let mut g = Graph::new();
    let (wv, bv) = (g.param(w.clone()), g.param(b.clone()));
    let xv = g.constant(x.clone());
    let h = g.linear(xv, wv, bv)?;
    let h = g.tanh(h)?;
    let sq = g.square(h)?;
    let loss = g.mean(sq)?;
    g.backward(loss)?;
    println!("loss      {:.6}", g.value(loss).item()?);
    println!("dloss/dw  {:?}", g.grad_or_zeros(wv).data());
    println!("dloss/db  {:?}", g.grad_or_zeros(bv).data());

    let report = finite_diff_check(&[w, b], 1e-6, |g, p| {
        let xv = g.constant(x.clone());
        let h = g.linear(xv, p[0], p[1])?;
        let h = g.tanh(h)?;
        let sq = g.square(h)?;
        g.mean(sq)
    })?;
    println!(
        "finite differences agree: max rel error {:.2e} over {} coordinates",
        report.max_rel_error, report.coordinates
    );
    Ok(())
}
