//! The four normalization variants behind one strategy interface:
//! standard BatchNorm, manual scalar calibration, and the two learned
//! instance-specific calibration layers (unconditional and conditional).
//!
//! All variants share one normalization formula so that the documented
//! equivalences (zero calibration == population BatchNorm, equal bases ==
//! unconditional, ...) hold to the last bit rather than approximately.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::store::ParamStore;

mod instcal_c;
mod instcal_u;
mod manual;
mod plain;

pub use instcal_c::{
    instcal_c_coefficients, instcal_c_coefficients_ids, instcal_c_forward, InstCalC,
};
pub use instcal_u::{instcal_u_forward, instcal_u_forward_ids, InstCalU};
pub use manual::{manual_calibrated_forward, ManualCal};
pub use plain::{bn_forward_eval, bn_forward_train, PlainBn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Whether calibrated layers compute statistics per sample (the method's
/// contract) or shared across the batch (the degradation probed by the
/// batch-statistics experiment).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsScope {
    PerInstance,
    PerBatch,
}

/// Per-layer population statistics and affine parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NormLayerState {
    pub mu_pop: Vec<f64>,
    pub var_pop: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
    pub mode: Mode,
}

impl NormLayerState {
    pub fn identity(channels: usize, momentum: f64, epsilon: f64) -> Self {
        Self {
            mu_pop: vec![0.0; channels],
            var_pop: vec![1.0; channels],
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            momentum,
            epsilon,
            mode: Mode::Eval,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        for (name, v) in [
            ("mu_pop", &self.mu_pop),
            ("var_pop", &self.var_pop),
            ("beta", &self.beta),
        ] {
            if v.len() != c {
                return Err(Error::Dimension {
                    op: "norm_state",
                    msg: format!("{name} has {} channels, gamma has {c}", v.len()),
                });
            }
        }
        if self.var_pop.iter().any(|v| *v < 0.0) {
            return Err(Error::Dimension {
                op: "norm_state",
                msg: "var_pop must be non-negative".into(),
            });
        }
        if !(self.epsilon > 0.0) || !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(Error::Dimension {
                op: "norm_state",
                msg: format!(
                    "epsilon {} must be > 0 and momentum {} in (0,1)",
                    self.epsilon, self.momentum
                ),
            });
        }
        Ok(())
    }
}

/// Per-channel batch statistics (means over B,H,W).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mu_b: Vec<f64>,
    pub var_b: Vec<f64>,
}

/// Per-sample per-channel statistics (means over H,W only).
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceStats {
    pub batch: usize,
    pub channels: usize,
    pub mu_ins: Vec<f64>,
    pub var_ins: Vec<f64>,
}

/// Unconditional calibration parameters, one strength per channel for the
/// mean and one for the variance.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationU {
    pub m_mu: Vec<f64>,
    pub m_sigma: Vec<f64>,
}

impl CalibrationU {
    pub fn init(channels: usize) -> Self {
        Self {
            m_mu: vec![CALIBRATION_INIT; channels],
            m_sigma: vec![CALIBRATION_INIT; channels],
        }
    }
}

/// Two-layer perceptron; weights stored input-major so forward is a plain
/// (B,in) x (in,hidden) matmul.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: crate::Tensor, // (in, hidden)
    pub b1: Vec<f64>,      // (hidden)
    pub w2: crate::Tensor, // (hidden, out)
    pub b2: Vec<f64>,      // (out)
}

/// Conditional calibration: K basis vectors per statistic plus the two
/// coefficient MLPs.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationC {
    pub k: usize,
    pub basis_mu: Vec<Vec<f64>>,
    pub basis_sigma: Vec<Vec<f64>>,
    pub mlp_mu: Mlp,
    pub mlp_sigma: Mlp,
}

/// Calibration strengths are initialized to the default BatchNorm momentum.
pub const CALIBRATION_INIT: f64 = 0.1;
/// Hidden width of the coefficient MLPs.
pub const MLP_HIDDEN: usize = 64;
/// Default basis count for the conditional variant.
pub const DEFAULT_BASIS: usize = 8;

/// Which normalization the model's norm layers run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormVariant {
    Plain,
    Manual { m: f64 },
    InstCalU,
    InstCalC { k: usize },
}

impl NormVariant {
    pub fn name(&self) -> &'static str {
        match self {
            NormVariant::Plain => "plain",
            NormVariant::Manual { .. } => "manual",
            NormVariant::InstCalU => "instcal-u",
            NormVariant::InstCalC { .. } => "instcal-c",
        }
    }

    pub fn is_calibrated(&self) -> bool {
        matches!(self, NormVariant::InstCalU | NormVariant::InstCalC { .. })
    }
}

/// Registry of variant names; `manual` takes the scalar strength, the
/// conditional variant takes its basis count.
pub fn variant_names() -> &'static [&'static str] {
    &["plain", "manual", "instcal-u", "instcal-c"]
}

pub fn variant_from_name(name: &str, manual_m: f64, k: usize) -> Option<NormVariant> {
    match name {
        "plain" => Some(NormVariant::Plain),
        "manual" => Some(NormVariant::Manual { m: manual_m }),
        "instcal-u" | "u" => Some(NormVariant::InstCalU),
        "instcal-c" | "c" => Some(NormVariant::InstCalC { k }),
        _ => None,
    }
}

/// Population-statistic EMA update produced by a training-mode forward,
/// applied to the parameter store by the caller after the step.
#[derive(Debug, Clone)]
pub struct EmaUpdate {
    pub layer: String,
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
}

pub struct NormOutput {
    pub y: TensorId,
    pub ema: Option<EmaUpdate>,
}

/// Everything a strategy needs to normalize one layer's activations.
pub struct NormCtx<'g, 'a> {
    pub graph: &'g mut Graph,
    pub store: &'a ParamStore,
    pub layer: &'a str,
    pub mode: Mode,
    pub scope: StatsScope,
    pub epsilon: f64,
    pub momentum: f64,
    /// When set, trainable store parameters become gradient leaves and are
    /// recorded here for the optimizer.
    pub grad_leaves: Option<&'g mut Vec<(String, TensorId)>>,
}

impl NormCtx<'_, '_> {
    /// Leaf for a named store parameter, reshaped to `shape`. Trainable
    /// parameters become gradient leaves when gradients are enabled; the
    /// recorded id is the leaf itself, not the reshape view, since only
    /// leaves retain gradients after backward.
    pub fn param_leaf(&mut self, suffix: &str, shape: Option<Vec<usize>>) -> Result<TensorId> {
        let name = format!("{}.{}", self.layer, suffix);
        let p = self.store.expect(&name)?;
        let wants_grad = p.trainable && self.grad_leaves.is_some();
        let leaf = self.graph.leaf(&p.tensor, wants_grad);
        if wants_grad {
            if let Some(leaves) = self.grad_leaves.as_deref_mut() {
                leaves.push((name, leaf));
            }
        }
        Ok(match shape {
            Some(s) => self.graph.reshape(leaf, s),
            None => leaf,
        })
    }
}

/// A normalization algorithm applied to one layer's activations.
pub trait NormStrategy {
    fn name(&self) -> &'static str;
    fn forward(&self, ctx: &mut NormCtx, x: TensorId) -> Result<NormOutput>;
    /// Names (relative to the layer prefix) of the calibration parameters
    /// this variant adds at conversion time.
    fn calibration_suffixes(&self, channels: usize) -> Vec<String>;
}

/// Strategy object for a variant.
pub fn strategy_for(variant: &NormVariant) -> Box<dyn NormStrategy + Send + Sync> {
    match variant {
        NormVariant::Plain => Box::new(PlainBn),
        NormVariant::Manual { m } => Box::new(ManualCal { m: *m }),
        NormVariant::InstCalU => Box::new(InstCalU),
        NormVariant::InstCalC { k } => Box::new(InstCalC { k: *k }),
    }
}

// ── shared formula pieces ───────────────────────────────────────────

/// Eq.-style convex-form mixing, (1-m)*a + m*b, written literally so both
/// endpoints are exact; `m` is not clamped and may extrapolate.
pub fn mix(g: &mut Graph, a: TensorId, b: TensorId, m: TensorId) -> Result<TensorId> {
    let neg_m = g.mul_scalar(m, -1.0);
    let one_minus_m = g.add_scalar(neg_m, 1.0);
    let ta = g.mul(one_minus_m, a)?;
    let tb = g.mul(m, b)?;
    g.add(ta, tb)
}

/// (x - mu) / sqrt(var + eps) * gamma + beta. Every variant funnels through
/// this so outputs agree bitwise whenever their statistics agree bitwise.
pub fn norm_affine(
    g: &mut Graph,
    x: TensorId,
    mu: TensorId,
    var: TensorId,
    gamma: TensorId,
    beta: TensorId,
    eps: f64,
) -> Result<TensorId> {
    let centered = g.sub(x, mu)?;
    let var_eps = g.add_scalar(var, eps);
    let std = g.sqrt(var_eps);
    let normed = g.div(centered, std)?;
    let scaled = g.mul(normed, gamma)?;
    g.add(scaled, beta)
}

/// Statistic axes for a scope: per-sample over H,W only, or shared over the
/// whole batch.
pub(crate) fn stat_axes(scope: StatsScope) -> &'static [usize] {
    match scope {
        StatsScope::PerInstance => &[2, 3],
        StatsScope::PerBatch => &[0, 2, 3],
    }
}

/// Mixing plus normalization once the input statistics are in hand: mix with
/// the population statistics by `m_mu`/`m_sigma`, clamp the mixed variance at
/// zero, and apply the shared affine normalization.
#[allow(clippy::too_many_arguments)]
pub(crate) fn mixed_norm_with_stats(
    g: &mut Graph,
    x: TensorId,
    mu_pop: TensorId,
    var_pop: TensorId,
    mu_ins: TensorId,
    var_ins: TensorId,
    m_mu: TensorId,
    m_sigma: TensorId,
    gamma: TensorId,
    beta: TensorId,
    eps: f64,
) -> Result<TensorId> {
    let mu = mix(g, mu_pop, mu_ins, m_mu)?;
    let var_raw = mix(g, var_pop, var_ins, m_sigma)?;
    let var = g.clamp_min(var_raw, 0.0);
    norm_affine(g, x, mu, var, gamma, beta, eps)
}

/// Mixed-statistic normalization shared by the manual and learned variants.
#[allow(clippy::too_many_arguments)]
pub(crate) fn calibrated_norm(
    g: &mut Graph,
    x: TensorId,
    mu_pop: TensorId,
    var_pop: TensorId,
    m_mu: TensorId,
    m_sigma: TensorId,
    gamma: TensorId,
    beta: TensorId,
    eps: f64,
    scope: StatsScope,
) -> Result<TensorId> {
    let (mu_ins, var_ins) = g.reduce_stats(x, stat_axes(scope))?;
    mixed_norm_with_stats(
        g, x, mu_pop, var_pop, mu_ins, var_ins, m_mu, m_sigma, gamma, beta, eps,
    )
}

/// Leaves for a value-level state (population stats constant, affine
/// constant), reshaped for N,C,H,W broadcasting.
pub(crate) fn state_leaves(
    g: &mut Graph,
    state: &NormLayerState,
) -> (TensorId, TensorId, TensorId, TensorId) {
    let c = state.channels();
    let shape = vec![1, c, 1, 1];
    let mu = g.leaf_owned(
        crate::Tensor::new(shape.clone(), state.mu_pop.clone()),
        false,
    );
    let var = g.leaf_owned(
        crate::Tensor::new(shape.clone(), state.var_pop.clone()),
        false,
    );
    let gamma = g.leaf_owned(crate::Tensor::new(shape.clone(), state.gamma.clone()), false);
    let beta = g.leaf_owned(crate::Tensor::new(shape, state.beta.clone()), false);
    (mu, var, gamma, beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    #[test]
    fn mix_endpoints_are_exact() {
        let mut g = Graph::new();
        let a = g.leaf(&Tensor::from_vec(vec![1.5, -2.25, 0.3]), false);
        let b = g.leaf(&Tensor::from_vec(vec![7.0, 0.125, -9.5]), false);
        let zero = g.scalar(0.0);
        let one = g.scalar(1.0);
        let at_zero = mix(&mut g, a, b, zero).unwrap();
        let at_one = mix(&mut g, a, b, one).unwrap();
        assert_eq!(g.data(at_zero), g.data(a));
        assert_eq!(g.data(at_one), g.data(b));
    }

    #[test]
    fn mix_interpolates_and_extrapolates() {
        let mut g = Graph::new();
        let a = g.scalar(2.0);
        let b = g.scalar(4.0);
        let m = g.scalar(0.25);
        let y = mix(&mut g, a, b, m).unwrap();
        assert_eq!(g.value(y), 2.5);
        // m outside [0,1] extrapolates, no clamping
        let m2 = g.scalar(2.0);
        let y2 = mix(&mut g, a, b, m2).unwrap();
        assert_eq!(g.value(y2), 6.0);
    }

    #[test]
    fn mix_per_channel_vector() {
        let mut g = Graph::new();
        let a = g.leaf(&Tensor::from_vec(vec![1.0, 1.0, 1.0]), false);
        let b = g.leaf(&Tensor::from_vec(vec![3.0, 3.0, 3.0]), false);
        let m = g.leaf(&Tensor::from_vec(vec![0.0, 0.5, 1.0]), false);
        let y = mix(&mut g, a, b, m).unwrap();
        assert_eq!(g.data(y), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn variant_lookup_by_name() {
        assert_eq!(
            variant_from_name("instcal-c", 0.1, 8),
            Some(NormVariant::InstCalC { k: 8 })
        );
        assert_eq!(variant_from_name("plain", 0.1, 8), Some(NormVariant::Plain));
        assert_eq!(variant_from_name("nope", 0.1, 8), None);
        for name in variant_names() {
            let v = variant_from_name(name, 0.2, 4).unwrap();
            assert_eq!(strategy_for(&v).name(), *name);
        }
    }
}
