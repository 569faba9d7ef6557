//! Manual calibration: population statistics mixed with per-sample instance
//! statistics by a single hand-set scalar strength.

use crate::error::Result;
use crate::graph::{Graph, TensorId};

use super::{
    calibrated_norm, state_leaves, NormCtx, NormLayerState, NormOutput, NormStrategy, StatsScope,
};

/// Mix per-sample instance statistics into the population statistics with
/// one scalar strength for both mean and variance, then normalize.
pub fn manual_calibrated_forward(
    g: &mut Graph,
    x: TensorId,
    state: &NormLayerState,
    m: f64,
) -> Result<TensorId> {
    state.validate()?;
    let (mu_pop, var_pop, gamma, beta) = state_leaves(g, state);
    let m_id = g.scalar(m);
    calibrated_norm(
        g,
        x,
        mu_pop,
        var_pop,
        m_id,
        m_id,
        gamma,
        beta,
        state.epsilon,
        StatsScope::PerInstance,
    )
}

pub struct ManualCal {
    pub m: f64,
}

impl NormStrategy for ManualCal {
    fn name(&self) -> &'static str {
        "manual"
    }

    fn forward(&self, ctx: &mut NormCtx, x: TensorId) -> Result<NormOutput> {
        let c = ctx.store.expect(&format!("{}.gamma", ctx.layer))?.tensor.numel();
        let shape = vec![1, c, 1, 1];
        let gamma = ctx.param_leaf("gamma", Some(shape.clone()))?;
        let beta = ctx.param_leaf("beta", Some(shape.clone()))?;
        let mu_pop = ctx.param_leaf("mu_pop", Some(shape.clone()))?;
        let var_pop = ctx.param_leaf("var_pop", Some(shape))?;
        let m_id = ctx.graph.scalar(self.m);
        let y = calibrated_norm(
            ctx.graph,
            x,
            mu_pop,
            var_pop,
            m_id,
            m_id,
            gamma,
            beta,
            ctx.epsilon,
            ctx.scope,
        )?;
        Ok(NormOutput { y, ema: None })
    }

    fn calibration_suffixes(&self, _channels: usize) -> Vec<String> {
        Vec::new()
    }
}

#[cfg(test)]
mod tests {
    use super::super::{bn_forward_eval, Mode};
    use super::*;
    use crate::Tensor;

    fn state() -> NormLayerState {
        NormLayerState {
            mu_pop: vec![0.4, -0.7],
            var_pop: vec![1.3, 0.6],
            gamma: vec![1.2, 0.8],
            beta: vec![0.05, -0.1],
            momentum: 0.1,
            epsilon: 1e-5,
            mode: Mode::Eval,
        }
    }

    fn sample() -> Tensor {
        Tensor::new(
            vec![2, 2, 2, 2],
            vec![
                0.1, 0.7, -0.4, 1.2, 0.9, -1.0, 0.3, 0.6, -0.2, 0.0, 1.5, -0.9, 0.4, 0.2, -0.6,
                0.8,
            ],
        )
    }

    #[test]
    fn m_zero_equals_population_eval() {
        let st = state();
        let x_t = sample();
        let mut g = Graph::new();
        let x = g.leaf(&x_t, false);
        let manual = manual_calibrated_forward(&mut g, x, &st, 0.0).unwrap();
        let x2 = g.leaf(&x_t, false);
        let eval = bn_forward_eval(&mut g, x2, &st).unwrap();
        for (a, b) in g.data(manual).iter().zip(g.data(eval)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn m_one_is_pure_instance_normalization() {
        let mut st = state();
        st.gamma = vec![1.0, 1.0];
        st.beta = vec![0.0, 0.0];
        let x_t = sample();
        let mut g = Graph::new();
        let x = g.leaf(&x_t, false);
        let y = manual_calibrated_forward(&mut g, x, &st, 1.0).unwrap();
        let d = g.data(y);
        // every sample-channel plane has mean ~ 0
        for plane in 0..4 {
            let m: f64 = d[plane * 4..(plane + 1) * 4].iter().sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-12, "plane {plane} mean {m}");
        }
    }

    #[test]
    fn half_mix_matches_scalar_reference() {
        // single channel, values [1,3]: mu_ins=2, var_ins=1
        // m=0.5 with mu_pop=0, var_pop=1 -> mixed mu=1, mixed var=1
        // y = ([1,3]-1)/sqrt(1+eps) = [0,2]*(1+eps)^(-1/2) with gamma=1, beta=0
        let st = NormLayerState {
            mu_pop: vec![0.0],
            var_pop: vec![1.0],
            gamma: vec![1.0],
            beta: vec![0.0],
            momentum: 0.1,
            epsilon: 1e-5,
            mode: Mode::Eval,
        };
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::new(vec![1, 1, 1, 2], vec![1.0, 3.0]), false);
        let y = manual_calibrated_forward(&mut g, x, &st, 0.5).unwrap();
        let scale = 1.0 / (1.0 + st.epsilon).sqrt();
        let d = g.data(y);
        assert!(d[0].abs() < 1e-12);
        assert!((d[1] - 2.0 * scale).abs() < 1e-12);
    }

    #[test]
    fn extrapolated_m_keeps_variance_nonnegative() {
        // m = 2 can drive the convex form negative; the clamp keeps sqrt real
        let st = NormLayerState {
            mu_pop: vec![0.0],
            var_pop: vec![4.0],
            gamma: vec![1.0],
            beta: vec![0.0],
            momentum: 0.1,
            epsilon: 1e-5,
            mode: Mode::Eval,
        };
        let mut g = Graph::new();
        // constant plane: var_ins = 0, mixed var = (1-2)*4 + 2*0 = -4 -> clamp 0
        let x = g.leaf(&Tensor::full(vec![1, 1, 2, 2], 3.0), false);
        let y = manual_calibrated_forward(&mut g, x, &st, 2.0).unwrap();
        assert!(g.data(y).iter().all(|v| v.is_finite()));
    }
}
