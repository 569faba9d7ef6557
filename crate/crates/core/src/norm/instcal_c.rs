//! Conditional learned calibration: the effective strength vectors are
//! softmax-weighted combinations of K learned basis vectors, with the
//! weights predicted per sample by small MLPs from the concatenated
//! population and instance statistics.

use crate::error::Result;
use crate::graph::{Graph, TensorId};
use crate::Tensor;

use super::{
    mixed_norm_with_stats, stat_axes, state_leaves, CalibrationC, Mlp, NormCtx, NormLayerState,
    NormOutput, NormStrategy,
};

/// Simplex coefficients (B,K) from concatenated population and per-sample
/// statistics run through a two-layer MLP.
pub fn instcal_c_coefficients_ids(
    g: &mut Graph,
    pop: TensorId,    // (B,C), population statistic broadcast per sample
    ins: TensorId,    // (B,C), per-sample statistic
    w1: TensorId,     // (2C,H)
    b1: TensorId,     // (1,H)
    w2: TensorId,     // (H,K)
    b2: TensorId,     // (1,K)
) -> Result<TensorId> {
    let joint = g.concat(&[pop, ins], 1)?;
    let h_lin = g.matmul(joint, w1)?;
    let h_aff = g.add(h_lin, b1)?;
    let h = g.relu(h_aff);
    let logits_lin = g.matmul(h, w2)?;
    let logits = g.add(logits_lin, b2)?;
    g.softmax(logits, 1)
}

/// Value-level coefficients: one simplex vector per sample row.
pub fn instcal_c_coefficients(mu_pop: &[f64], mu_ins: &Tensor, mlp: &Mlp) -> Result<Tensor> {
    let b = mu_ins.shape[0];
    let c = mu_pop.len();
    assert_eq!(mu_ins.shape, vec![b, c]);
    let mut g = Graph::new();
    let pop_row = g.leaf_owned(Tensor::new(vec![1, c], mu_pop.to_vec()), false);
    let pop = g.broadcast_to(pop_row, vec![b, c])?;
    let ins = g.leaf(mu_ins, false);
    let hidden = mlp.b1.len();
    let k = mlp.b2.len();
    let w1 = g.leaf(&mlp.w1, false);
    let b1 = g.leaf_owned(Tensor::new(vec![1, hidden], mlp.b1.clone()), false);
    let w2 = g.leaf(&mlp.w2, false);
    let b2 = g.leaf_owned(Tensor::new(vec![1, k], mlp.b2.clone()), false);
    let coeff = instcal_c_coefficients_ids(&mut g, pop, ins, w1, b1, w2, b2)?;
    Ok(g.to_tensor(coeff))
}

/// Full conditional forward at the value level (used by tests; the model
/// path goes through the [`InstCalC`] strategy).
pub fn instcal_c_forward(
    g: &mut Graph,
    x: TensorId,
    state: &NormLayerState,
    cal: &CalibrationC,
) -> Result<TensorId> {
    state.validate()?;
    let c = state.channels();
    let k = cal.k;
    assert!(k >= 1, "basis count must be >= 1");
    let (mu_pop, var_pop, gamma, beta) = state_leaves(g, state);

    let (mu_ins, var_ins) = g.reduce_stats(x, stat_axes(super::StatsScope::PerInstance))?;
    let b = g.shape(x)[0];

    let basis_mu: Vec<TensorId> = cal
        .basis_mu
        .iter()
        .map(|row| g.leaf_owned(Tensor::new(vec![1, c], row.clone()), false))
        .collect();
    let basis_sigma: Vec<TensorId> = cal
        .basis_sigma
        .iter()
        .map(|row| g.leaf_owned(Tensor::new(vec![1, c], row.clone()), false))
        .collect();

    let mlp_leaves = |g: &mut Graph, mlp: &Mlp| -> (TensorId, TensorId, TensorId, TensorId) {
        let hidden = mlp.b1.len();
        let kk = mlp.b2.len();
        let w1 = g.leaf(&mlp.w1, false);
        let b1 = g.leaf_owned(Tensor::new(vec![1, hidden], mlp.b1.clone()), false);
        let w2 = g.leaf(&mlp.w2, false);
        let b2 = g.leaf_owned(Tensor::new(vec![1, kk], mlp.b2.clone()), false);
        (w1, b1, w2, b2)
    };

    let mu_pop_bc = g.reshape(mu_pop, vec![1, c]);
    let mu_pop_bc = g.broadcast_to(mu_pop_bc, vec![b, c])?;
    let mu_ins_bc = g.reshape(mu_ins, vec![b, c]);
    let (w1, b1, w2, b2) = mlp_leaves(g, &cal.mlp_mu);
    let coeff_mu = instcal_c_coefficients_ids(g, mu_pop_bc, mu_ins_bc, w1, b1, w2, b2)?;
    let basis_mu_mat = g.concat(&basis_mu, 0)?;
    let eff_mu = g.matmul(coeff_mu, basis_mu_mat)?;
    let m_mu = g.reshape(eff_mu, vec![b, c, 1, 1]);

    let var_pop_bc = g.reshape(var_pop, vec![1, c]);
    let var_pop_bc = g.broadcast_to(var_pop_bc, vec![b, c])?;
    let var_ins_bc = g.reshape(var_ins, vec![b, c]);
    let (w1s, b1s, w2s, b2s) = mlp_leaves(g, &cal.mlp_sigma);
    let coeff_sigma = instcal_c_coefficients_ids(g, var_pop_bc, var_ins_bc, w1s, b1s, w2s, b2s)?;
    let basis_sigma_mat = g.concat(&basis_sigma, 0)?;
    let eff_sigma = g.matmul(coeff_sigma, basis_sigma_mat)?;
    let m_sigma = g.reshape(eff_sigma, vec![b, c, 1, 1]);

    // mu_pop/var_pop reshaped leaves are reused by the mixing step
    let mu_pop4 = {
        let t = Tensor::new(vec![1, c, 1, 1], state.mu_pop.clone());
        g.leaf_owned(t, false)
    };
    let var_pop4 = {
        let t = Tensor::new(vec![1, c, 1, 1], state.var_pop.clone());
        g.leaf_owned(t, false)
    };
    mixed_norm_with_stats(
        g,
        x,
        mu_pop4,
        var_pop4,
        mu_ins,
        var_ins,
        m_mu,
        m_sigma,
        gamma,
        beta,
        state.epsilon,
    )
}

pub struct InstCalC {
    pub k: usize,
}

impl NormStrategy for InstCalC {
    fn name(&self) -> &'static str {
        "instcal-c"
    }

    fn forward(&self, ctx: &mut NormCtx, x: TensorId) -> Result<NormOutput> {
        let c = ctx.store.expect(&format!("{}.gamma", ctx.layer))?.tensor.numel();
        let shape4 = vec![1, c, 1, 1];
        let gamma = ctx.param_leaf("gamma", Some(shape4.clone()))?;
        let beta = ctx.param_leaf("beta", Some(shape4.clone()))?;
        let mu_pop = ctx.param_leaf("mu_pop", Some(shape4.clone()))?;
        let var_pop = ctx.param_leaf("var_pop", Some(shape4))?;

        let (mu_ins, var_ins) = ctx.graph.reduce_stats(x, stat_axes(ctx.scope))?;
        let b = ctx.graph.shape(mu_ins)[0];

        let eff = |ctx: &mut NormCtx,
                       which: &str,
                       pop: TensorId,
                       ins: TensorId|
         -> Result<TensorId> {
            let w1 = ctx.param_leaf(&format!("mlp_{which}.w1"), None)?;
            let hidden = ctx.graph.shape(w1)[1];
            let b1 = ctx.param_leaf(&format!("mlp_{which}.b1"), Some(vec![1, hidden]))?;
            let w2 = ctx.param_leaf(&format!("mlp_{which}.w2"), None)?;
            let b2 = ctx.param_leaf(&format!("mlp_{which}.b2"), Some(vec![1, self.k]))?;
            let pop_bc = ctx.graph.reshape(pop, vec![1, c]);
            let pop_bc = ctx.graph.broadcast_to(pop_bc, vec![b, c])?;
            let ins_bc = ctx.graph.reshape(ins, vec![b, c]);
            let coeff = instcal_c_coefficients_ids(ctx.graph, pop_bc, ins_bc, w1, b1, w2, b2)?;
            let mut rows = Vec::with_capacity(self.k);
            for i in 0..self.k {
                rows.push(ctx.param_leaf(&format!("basis_{which}.{i}"), Some(vec![1, c]))?);
            }
            let basis = ctx.graph.concat(&rows, 0)?;
            let m = ctx.graph.matmul(coeff, basis)?;
            Ok(ctx.graph.reshape(m, vec![b, c, 1, 1]))
        };

        let m_mu = eff(ctx, "mu", mu_pop, mu_ins)?;
        let m_sigma = eff(ctx, "sigma", var_pop, var_ins)?;
        let y = mixed_norm_with_stats(
            ctx.graph,
            x,
            mu_pop,
            var_pop,
            mu_ins,
            var_ins,
            m_mu,
            m_sigma,
            gamma,
            beta,
            ctx.epsilon,
        )?;
        Ok(NormOutput { y, ema: None })
    }

    fn calibration_suffixes(&self, _channels: usize) -> Vec<String> {
        let mut names = Vec::new();
        for which in ["mu", "sigma"] {
            for i in 0..self.k {
                names.push(format!("basis_{which}.{i}"));
            }
            for part in ["w1", "b1", "w2", "b2"] {
                names.push(format!("mlp_{which}.{part}"));
            }
        }
        names
    }
}

#[cfg(test)]
mod tests {
    use super::super::{instcal_u_forward, CalibrationU, Mode};
    use super::*;

    fn state() -> NormLayerState {
        NormLayerState {
            mu_pop: vec![0.2, -0.4],
            var_pop: vec![1.5, 0.8],
            gamma: vec![0.9, 1.3],
            beta: vec![0.1, -0.2],
            momentum: 0.1,
            epsilon: 1e-5,
            mode: Mode::Eval,
        }
    }

    fn sample() -> Tensor {
        Tensor::new(
            vec![2, 2, 2, 2],
            vec![
                0.31, -0.88, 1.2, 0.05, -0.6, 0.7, 0.4, -1.1, 0.9, 0.2, -0.3, 0.6, 1.4, -0.5,
                0.08, -0.02,
            ],
        )
    }

    fn mlp(c: usize, k: usize, hidden: usize) -> Mlp {
        Mlp {
            w1: Tensor::zeros(vec![2 * c, hidden]),
            b1: vec![0.0; hidden],
            w2: Tensor::zeros(vec![hidden, k]),
            b2: vec![0.0; k],
        }
    }

    #[test]
    fn zero_mlp_gives_uniform_coefficients() {
        let coeff = instcal_c_coefficients(
            &[0.3, -0.2],
            &Tensor::new(vec![2, 2], vec![0.5, 0.1, -0.7, 0.9]),
            &mlp(2, 4, 8),
        )
        .unwrap();
        for v in &coeff.data {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn single_basis_coefficient_is_one() {
        let mut m = mlp(2, 1, 8);
        // arbitrary weights: softmax over one logit is always 1
        m.w1.data.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64 * 0.37).sin());
        m.w2.data.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64 * 0.11).cos());
        let coeff = instcal_c_coefficients(
            &[1.0, 0.0],
            &Tensor::new(vec![1, 2], vec![0.4, -0.6]),
            &m,
        )
        .unwrap();
        assert_eq!(coeff.data, vec![1.0]);
    }

    #[test]
    fn tiny_mlp_matches_scalar_evaluation() {
        // 2 -> 2 -> 2 with hand-set weights on input [1, 0]
        let m = Mlp {
            w1: Tensor::new(vec![2, 2], vec![0.5, -0.25, 0.75, 1.0]),
            b1: vec![0.1, -0.1],
            w2: Tensor::new(vec![2, 2], vec![1.0, 0.5, -0.5, 0.25]),
            b2: vec![0.0, 0.2],
        };
        // input here is the concatenation (pop || ins) with C = 1
        let coeff = instcal_c_coefficients(&[1.0], &Tensor::new(vec![1, 1], vec![0.0]), &m).unwrap();
        // hidden = relu([1*0.5 + 0*0.75 + 0.1, 1*(-0.25) + 0*1.0 - 0.1]) = [0.6, 0]
        // logits = [0.6*1.0 + 0*(-0.5) + 0, 0.6*0.5 + 0*0.25 + 0.2] = [0.6, 0.5]
        let (l0, l1) = (0.6, 0.5);
        let z = (l0_f(l0) + l0_f(l1)) as f64;
        fn l0_f(x: f64) -> f64 {
            x.exp()
        }
        let expect = [l0_f(l0) / z, l0_f(l1) / z];
        for (a, b) in coeff.data.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn single_basis_reduces_to_unconditional() {
        let st = state();
        let v_mu = vec![0.35, 0.15];
        let v_sigma = vec![0.05, 0.45];
        let mut m_mu = mlp(2, 1, 8);
        m_mu.w1.data.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64 * 0.19).sin());
        let cal = CalibrationC {
            k: 1,
            basis_mu: vec![v_mu.clone()],
            basis_sigma: vec![v_sigma.clone()],
            mlp_mu: m_mu,
            mlp_sigma: mlp(2, 1, 8),
        };
        let mut g = Graph::new();
        let x = g.leaf(&sample(), false);
        let y = instcal_c_forward(&mut g, x, &st, &cal).unwrap();
        let x2 = g.leaf(&sample(), false);
        let y2 = instcal_u_forward(
            &mut g,
            x2,
            &st,
            &CalibrationU {
                m_mu: v_mu,
                m_sigma: v_sigma,
            },
        )
        .unwrap();
        for (a, b) in g.data(y).iter().zip(g.data(y2)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn equal_bases_reduce_to_unconditional_for_any_mlp() {
        let st = state();
        let v_mu = vec![0.3, -0.1];
        let v_sigma = vec![0.6, 0.2];
        let mut mlp_mu = mlp(2, 3, 8);
        let mut mlp_sigma = mlp(2, 3, 8);
        for (i, v) in mlp_mu.w1.data.iter_mut().enumerate() {
            *v = ((i * 7 % 13) as f64 - 6.0) * 0.2;
        }
        for (i, v) in mlp_mu.w2.data.iter_mut().enumerate() {
            *v = ((i * 5 % 11) as f64 - 5.0) * 0.3;
        }
        mlp_sigma.b2 = vec![0.4, -0.2, 1.1];
        let cal = CalibrationC {
            k: 3,
            basis_mu: vec![v_mu.clone(); 3],
            basis_sigma: vec![v_sigma.clone(); 3],
            mlp_mu,
            mlp_sigma,
        };
        let mut g = Graph::new();
        let x = g.leaf(&sample(), false);
        let y = instcal_c_forward(&mut g, x, &st, &cal).unwrap();
        let x2 = g.leaf(&sample(), false);
        let y2 = instcal_u_forward(
            &mut g,
            x2,
            &st,
            &CalibrationU {
                m_mu: v_mu,
                m_sigma: v_sigma,
            },
        )
        .unwrap();
        for (a, b) in g.data(y).iter().zip(g.data(y2)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn two_bases_zero_mlp_averages_the_bases() {
        let st = state();
        let cal = CalibrationC {
            k: 2,
            basis_mu: vec![vec![0.2, 0.4], vec![0.6, 0.0]],
            basis_sigma: vec![vec![0.1, 0.3], vec![0.5, 0.7]],
            mlp_mu: mlp(2, 2, 8),
            mlp_sigma: mlp(2, 2, 8),
        };
        let mut g = Graph::new();
        let x = g.leaf(&sample(), false);
        let y = instcal_c_forward(&mut g, x, &st, &cal).unwrap();
        // zero MLPs -> uniform coefficients -> effective m = mean of bases
        let x2 = g.leaf(&sample(), false);
        let y2 = instcal_u_forward(
            &mut g,
            x2,
            &st,
            &CalibrationU {
                m_mu: vec![0.4, 0.2],
                m_sigma: vec![0.3, 0.5],
            },
        )
        .unwrap();
        for (a, b) in g.data(y).iter().zip(g.data(y2)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}
