//! Central finite-difference validation of analytic gradients.

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::tensor::Tensor;

/// Compare analytic gradients of a scalar-valued builder against central
/// finite differences, returning the max relative error over all parameter
/// elements. Relative error uses denominator max(|analytic|, |numeric|, 1e-8).
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[TensorId]) -> Result<TensorId>,
{
    assert!(eps > 0.0, "grad_check requires eps > 0");
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<TensorId> = ps.iter().map(|p| g.leaf(p, false)).collect();
        let root = f(&mut g, &ids)?;
        let v = g.value(root);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: "grad_check objective".into(),
            });
        }
        Ok(v)
    };

    // analytic pass
    let mut g = Graph::new();
    let ids: Vec<TensorId> = params.iter().map(|p| g.leaf(p, true)).collect();
    let root = f(&mut g, &ids)?;
    if !g.value(root).is_finite() {
        return Err(Error::NonFinite {
            context: "grad_check objective".into(),
        });
    }
    g.backward(root)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(params)
        .map(|(&id, p)| {
            g.grad(id)
                .map(|gr| gr.to_vec())
                .unwrap_or_else(|| vec![0.0; p.numel()])
        })
        .collect();

    let mut work: Vec<Tensor> = params.to_vec();
    let mut max_rel = 0.0f64;
    for (pi, p) in params.iter().enumerate() {
        for ei in 0..p.numel() {
            let orig = p.data[ei];
            work[pi].data[ei] = orig + eps;
            let plus = eval(&work)?;
            work[pi].data[ei] = orig - eps;
            let minus = eval(&work)?;
            work[pi].data[ei] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pi][ei];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max((a - numeric).abs() / denom);
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        // f(p) = sum(p^2) at p=[1,2]: analytic [2,4]
        let p = Tensor::from_vec(vec![1.0, 2.0]);
        let err = grad_check(
            |g, ids| {
                let sq = g.mul(ids[0], ids[0])?;
                g.reduce_sum(sq, &[0])
            },
            &[p],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-8, "max rel error {err}");
    }

    #[test]
    fn non_finite_objective_is_rejected() {
        let p = Tensor::from_vec(vec![-1.0]);
        let r = grad_check(
            |g, ids| {
                let s = g.sqrt(ids[0]);
                g.reduce_sum(s, &[0])
            },
            &[p],
            1e-6,
        );
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }
}
