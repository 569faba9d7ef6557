//! Unconditional learned calibration: per-channel strength vectors for the
//! mean and variance, fixed after training and applied identically to every
//! test instance.

use crate::error::Result;
use crate::graph::{Graph, TensorId};

use super::{
    calibrated_norm, state_leaves, CalibrationU, NormCtx, NormLayerState, NormOutput,
    NormStrategy, StatsScope,
};

/// Calibrated normalization with learned per-channel strengths; the output
/// is differentiable w.r.t. `m_mu`/`m_sigma` when they are gradient leaves.
pub fn instcal_u_forward_ids(
    g: &mut Graph,
    x: TensorId,
    state: &NormLayerState,
    m_mu: TensorId,
    m_sigma: TensorId,
) -> Result<TensorId> {
    state.validate()?;
    let c = state.channels();
    let (mu_pop, var_pop, gamma, beta) = state_leaves(g, state);
    let m_mu = g.reshape(m_mu, vec![1, c, 1, 1]);
    let m_sigma = g.reshape(m_sigma, vec![1, c, 1, 1]);
    calibrated_norm(
        g,
        x,
        mu_pop,
        var_pop,
        m_mu,
        m_sigma,
        gamma,
        beta,
        state.epsilon,
        StatsScope::PerInstance,
    )
}

/// Value-level convenience over [`instcal_u_forward_ids`].
pub fn instcal_u_forward(
    g: &mut Graph,
    x: TensorId,
    state: &NormLayerState,
    cal: &CalibrationU,
) -> Result<TensorId> {
    let m_mu = g.leaf_owned(crate::Tensor::from_vec(cal.m_mu.clone()), false);
    let m_sigma = g.leaf_owned(crate::Tensor::from_vec(cal.m_sigma.clone()), false);
    instcal_u_forward_ids(g, x, state, m_mu, m_sigma)
}

pub struct InstCalU;

impl NormStrategy for InstCalU {
    fn name(&self) -> &'static str {
        "instcal-u"
    }

    fn forward(&self, ctx: &mut NormCtx, x: TensorId) -> Result<NormOutput> {
        let c = ctx.store.expect(&format!("{}.gamma", ctx.layer))?.tensor.numel();
        let shape = vec![1, c, 1, 1];
        let gamma = ctx.param_leaf("gamma", Some(shape.clone()))?;
        let beta = ctx.param_leaf("beta", Some(shape.clone()))?;
        let mu_pop = ctx.param_leaf("mu_pop", Some(shape.clone()))?;
        let var_pop = ctx.param_leaf("var_pop", Some(shape.clone()))?;
        let m_mu = ctx.param_leaf("m_mu", Some(shape.clone()))?;
        let m_sigma = ctx.param_leaf("m_sigma", Some(shape))?;
        let y = calibrated_norm(
            ctx.graph,
            x,
            mu_pop,
            var_pop,
            m_mu,
            m_sigma,
            gamma,
            beta,
            ctx.epsilon,
            ctx.scope,
        )?;
        Ok(NormOutput { y, ema: None })
    }

    fn calibration_suffixes(&self, _channels: usize) -> Vec<String> {
        vec!["m_mu".into(), "m_sigma".into()]
    }
}
