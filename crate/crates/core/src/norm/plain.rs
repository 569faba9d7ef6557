//! Standard BatchNorm: batch statistics plus EMA population updates in
//! training, stored population statistics at evaluation.

use crate::error::Result;
use crate::graph::{Graph, TensorId};

use super::{
    norm_affine, state_leaves, EmaUpdate, Mode, NormCtx, NormLayerState, NormOutput, NormStrategy,
};

/// Normalize with batch statistics and return the EMA-updated state.
pub fn bn_forward_train(
    g: &mut Graph,
    x: TensorId,
    state: &NormLayerState,
) -> Result<(TensorId, NormLayerState)> {
    assert_eq!(state.mode, Mode::Train, "bn_forward_train requires Train mode");
    state.validate()?;
    let (_, _, gamma, beta) = state_leaves(g, state);
    let (mu_b, var_b) = g.reduce_stats(x, &[0, 2, 3])?;
    let y = norm_affine(g, x, mu_b, var_b, gamma, beta, state.epsilon)?;

    let alpha = state.momentum;
    let mut new_state = state.clone();
    for (dst, &b) in new_state.mu_pop.iter_mut().zip(g.data(mu_b)) {
        *dst = (1.0 - alpha) * *dst + alpha * b;
    }
    for (dst, &b) in new_state.var_pop.iter_mut().zip(g.data(var_b)) {
        *dst = (1.0 - alpha) * *dst + alpha * b;
    }
    Ok((y, new_state))
}

/// Normalize with the stored population statistics; state is untouched.
pub fn bn_forward_eval(g: &mut Graph, x: TensorId, state: &NormLayerState) -> Result<TensorId> {
    state.validate()?;
    let (mu, var, gamma, beta) = state_leaves(g, state);
    norm_affine(g, x, mu, var, gamma, beta, state.epsilon)
}

pub struct PlainBn;

impl NormStrategy for PlainBn {
    fn name(&self) -> &'static str {
        "plain"
    }

    fn forward(&self, ctx: &mut NormCtx, x: TensorId) -> Result<NormOutput> {
        let c = ctx.store.expect(&format!("{}.gamma", ctx.layer))?.tensor.numel();
        let shape = vec![1, c, 1, 1];
        let gamma = ctx.param_leaf("gamma", Some(shape.clone()))?;
        let beta = ctx.param_leaf("beta", Some(shape.clone()))?;
        match ctx.mode {
            Mode::Train => {
                let (mu_b, var_b) = ctx.graph.reduce_stats(x, &[0, 2, 3])?;
                let y = norm_affine(ctx.graph, x, mu_b, var_b, gamma, beta, ctx.epsilon)?;
                let alpha = ctx.momentum;
                let mu_pop = &ctx.store.expect(&format!("{}.mu_pop", ctx.layer))?.tensor.data;
                let var_pop = &ctx
                    .store
                    .expect(&format!("{}.var_pop", ctx.layer))?
                    .tensor
                    .data;
                let mu: Vec<f64> = mu_pop
                    .iter()
                    .zip(ctx.graph.data(mu_b))
                    .map(|(p, b)| (1.0 - alpha) * p + alpha * b)
                    .collect();
                let var: Vec<f64> = var_pop
                    .iter()
                    .zip(ctx.graph.data(var_b))
                    .map(|(p, b)| (1.0 - alpha) * p + alpha * b)
                    .collect();
                Ok(NormOutput {
                    y,
                    ema: Some(EmaUpdate {
                        layer: ctx.layer.to_string(),
                        mu,
                        var,
                    }),
                })
            }
            Mode::Eval => {
                let mu = ctx.param_leaf("mu_pop", Some(shape.clone()))?;
                let var = ctx.param_leaf("var_pop", Some(shape))?;
                let y = norm_affine(ctx.graph, x, mu, var, gamma, beta, ctx.epsilon)?;
                Ok(NormOutput { y, ema: None })
            }
        }
    }

    fn calibration_suffixes(&self, _channels: usize) -> Vec<String> {
        Vec::new()
    }
}
