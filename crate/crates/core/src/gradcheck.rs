//! Central finite-difference oracle for gradients produced by [`Graph`].

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max over coordinates of `|g_ad − g_fd| / max(1e-12, |g_ad| + |g_fd|)`.
    pub max_rel_error: f64,
    /// `(parameter index, flat coordinate)` where the max was attained.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

/// Compares reverse-mode gradients of `f` against central differences with
/// step `eps`.
///
/// `f` receives a fresh graph and one leaf per entry of `params` and must
/// return a scalar loss. It is called once with tracked leaves and twice per
/// coordinate with constants, so it has to be deterministic; seed any
/// randomness inside the closure.
pub fn finite_diff_check<F>(params: &[Tensor], eps: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::contract(format!("finite-difference step {eps}")));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|v| g.grad_or_zeros(*v)).collect();

    let mut eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.constant(p.clone())).collect();
        let out = f(&mut g, &vars)?;
        let v = g.value(out).item()?;
        if !v.is_finite() {
            return Err(Error::NonFinite("finite-difference evaluation".into()));
        }
        Ok(v)
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
    };
    for (pi, p) in params.iter().enumerate() {
        for ci in 0..p.len() {
            let orig = p.data()[ci];
            work[pi].data_mut()[ci] = orig + eps;
            let up = eval(&work)?;
            work[pi].data_mut()[ci] = orig - eps;
            let down = eval(&work)?;
            work[pi].data_mut()[ci] = orig;

            let fd = (up - down) / (2.0 * eps);
            let ad = analytic[pi].data()[ci];
            let rel = (ad - fd).abs() / f64::max(1e-12, ad.abs() + fd.abs());
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (pi, ci);
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let x = Tensor::vector(vec![3.0]).unwrap();
        let r = finite_diff_check(&[x], 1e-5, |g, v| {
            let s = g.square(v[0])?;
            g.sum(s)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{}", r.max_rel_error);
    }

    #[test]
    fn mean_tanh_of_matrix_vector_product() {
        let w = Tensor::matrix(2, 2, vec![0.3, -1.2, 0.7, 0.4]).unwrap();
        let x = Tensor::matrix(2, 1, vec![1.5, -0.5]).unwrap();
        let r = finite_diff_check(&[w, x], 1e-5, |g, v| {
            let p = g.matmul(v[0], v[1])?;
            let t = g.tanh(p)?;
            g.mean(t)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{}", r.max_rel_error);
        assert_eq!(r.coordinates, 6);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // detach hides the dependence from backward but not from the
        // finite differences, so the check must flag it.
        let x = Tensor::vector(vec![1.3]).unwrap();
        let r = finite_diff_check(&[x], 1e-5, |g, v| {
            let d = g.detach(v[0]);
            let y = g.mul(v[0], d)?;
            g.sum(y)
        })
        .unwrap();
        assert!(r.max_rel_error > 0.1);
    }

    #[test]
    fn non_finite_evaluation_is_reported() {
        let x = Tensor::vector(vec![800.0]).unwrap();
        let err = finite_diff_check(&[x], 1e-5, |g, v| {
            let e = g.exp(v[0])?;
            g.sum(e)
        });
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }
}
