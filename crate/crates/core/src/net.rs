//! Small fully-convolutional segmentation network with pluggable
//! normalization: four 3x3 conv stages (two stride-2 downsamples, two
//! nearest-neighbor upsamples) and a 3x3 classifier head. A norm layer
//! follows every convolution except the head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::norm::{strategy_for, EmaUpdate, Mode, NormCtx, NormVariant, StatsScope};
use crate::rng::rng_for;
use crate::store::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegNetConfig {
    pub widths: Vec<usize>,
    pub n_classes: usize,
    pub norm: NormVariant,
    pub epsilon: f64,
    pub momentum: f64,
}

impl Default for SegNetConfig {
    fn default() -> Self {
        Self {
            widths: vec![16, 32, 32, 16],
            n_classes: 5,
            norm: NormVariant::Plain,
            epsilon: 1e-5,
            momentum: 0.1,
        }
    }
}

impl SegNetConfig {
    /// (in_channels, out_channels, stride) per conv, head last.
    pub fn conv_plan(&self) -> Vec<(usize, usize, usize)> {
        let w = &self.widths;
        vec![
            (3, w[0], 1),
            (w[0], w[1], 2),
            (w[1], w[2], 2),
            (w[2], w[3], 1),
            (w[3], self.n_classes, 1),
        ]
    }

    pub fn norm_layer_count(&self) -> usize {
        self.conv_plan().len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegNet {
    pub config: SegNetConfig,
    pub store: ParamStore,
}

#[derive(Debug)]
pub struct ForwardTrace {
    pub logits: TensorId,
    /// Gradient leaves registered during the pass, name -> tensor id.
    pub leaves: Vec<(String, TensorId)>,
    /// Population-statistic updates to apply after the step (PlainBn only).
    pub ema: Vec<EmaUpdate>,
}

pub const KERNEL: usize = 3;
pub const PADDING: usize = 1;

/// Deterministically initialized network: fan-in-scaled uniform conv
/// weights, zero biases, identity norm parameters.
pub fn build(config: &SegNetConfig, seed: u64) -> SegNet {
    assert_eq!(config.widths.len(), 4, "expected four stage widths");
    let mut store = ParamStore::new();
    for (i, (in_c, out_c, _)) in config.conv_plan().iter().enumerate() {
        let mut rng = rng_for(seed, &format!("conv{i}"));
        let fan_in = in_c * KERNEL * KERNEL;
        let bound = (1.0 / fan_in as f64).sqrt();
        let data: Vec<f64> = (0..out_c * in_c * KERNEL * KERNEL)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        store.insert(
            format!("conv{i}.weight"),
            Tensor::new(vec![*out_c, *in_c, KERNEL, KERNEL], data),
            true,
        );
        store.insert(format!("conv{i}.bias"), Tensor::zeros(vec![*out_c]), true);
    }
    for (i, (_, out_c, _)) in config
        .conv_plan()
        .iter()
        .enumerate()
        .take(config.norm_layer_count())
    {
        let layer = format!("norm{i}");
        store.insert(format!("{layer}.gamma"), Tensor::full(vec![*out_c], 1.0), true);
        store.insert(format!("{layer}.beta"), Tensor::zeros(vec![*out_c]), true);
        store.insert(format!("{layer}.mu_pop"), Tensor::zeros(vec![*out_c]), false);
        store.insert(
            format!("{layer}.var_pop"),
            Tensor::full(vec![*out_c], 1.0),
            false,
        );
    }
    SegNet {
        config: config.clone(),
        store,
    }
}

impl SegNet {
    pub fn norm_layers(&self) -> Vec<String> {
        (0..self.config.norm_layer_count())
            .map(|i| format!("norm{i}"))
            .collect()
    }

    /// Forward pass building a fresh graph over `images` (N,3,H,W in [0,1]).
    ///
    /// `grads` enables gradient leaves for trainable parameters; calibrated
    /// norm variants behave identically in both modes (always
    /// instance-calibrated), plain BatchNorm switches between batch and
    /// population statistics.
    pub fn forward(
        &self,
        g: &mut Graph,
        images: &Tensor,
        mode: Mode,
        scope: StatsScope,
        grads: bool,
    ) -> Result<ForwardTrace> {
        assert_eq!(images.shape.len(), 4, "images must be N,C,H,W");
        let strategy = strategy_for(&self.config.norm);
        let mut leaves: Vec<(String, TensorId)> = Vec::new();
        let mut ema = Vec::new();
        let mut x = g.leaf(images, false);
        let plan = self.config.conv_plan();
        let n_norm = self.config.norm_layer_count();
        for (i, (_, out_c, stride)) in plan.iter().enumerate() {
            // decoder upsamples before its two convs
            if i == 3 || i == 4 {
                x = g.upsample2(x);
            }
            let wname = format!("conv{i}.weight");
            let bname = format!("conv{i}.bias");
            let wp = self.store.expect(&wname)?;
            let want_w = wp.trainable && grads;
            let w = g.leaf(&wp.tensor, want_w);
            if want_w {
                leaves.push((wname, w));
            }
            x = g.conv2d(x, w, *stride, PADDING)?;
            let bp = self.store.expect(&bname)?;
            let want_b = bp.trainable && grads;
            let bias = g.leaf(&bp.tensor, want_b);
            if want_b {
                leaves.push((bname, bias));
            }
            let bias = g.reshape(bias, vec![1, *out_c, 1, 1]);
            x = g.add(x, bias)?;
            // checked before relu: f64::max treats NaN as its other operand
            g.finite_check(x, &format!("layer {i} (conv{i})"))?;

            if i < n_norm {
                let layer = format!("norm{i}");
                let mut ctx = NormCtx {
                    graph: g,
                    store: &self.store,
                    layer: &layer,
                    mode,
                    scope,
                    epsilon: self.config.epsilon,
                    momentum: self.config.momentum,
                    grad_leaves: if grads { Some(&mut leaves) } else { None },
                };
                let out = strategy.forward(&mut ctx, x)?;
                x = out.y;
                if let Some(u) = out.ema {
                    ema.push(u);
                }
                x = g.relu(x);
                g.finite_check(x, &format!("layer {i} (norm{i})"))?;
            }
        }
        Ok(ForwardTrace {
            logits: x,
            leaves,
            ema,
        })
    }

    /// Apply population-statistic updates produced by a training forward.
    pub fn apply_ema(&mut self, updates: &[EmaUpdate]) -> Result<()> {
        for u in updates {
            self.store.set_data(&format!("{}.mu_pop", u.layer), u.mu.clone())?;
            self.store
                .set_data(&format!("{}.var_pop", u.layer), u.var.clone())?;
        }
        Ok(())
    }

    /// Clone with gamma/beta of every norm layer marked trainable and all
    /// other parameters frozen (the entropy-minimization overlay).
    pub fn affine_overlay(&self) -> SegNet {
        let mut clone = self.clone();
        clone.store.freeze_all();
        for layer in self.norm_layers() {
            clone.store.set_trainable(&format!("{layer}.gamma"), true).unwrap();
            clone.store.set_trainable(&format!("{layer}.beta"), true).unwrap();
        }
        clone
    }
}

/// Convert a plain-BatchNorm model into a calibrated variant: population
/// statistics and affine parameters are copied verbatim and frozen, new
/// calibration parameters are initialized and marked trainable.
pub fn convert_model(net: &SegNet, variant: &NormVariant, seed: u64) -> Result<SegNet> {
    if net.config.norm != NormVariant::Plain {
        return Err(Error::AlreadyConverted {
            variant: net.config.norm.name().to_string(),
        });
    }
    let layers = net.norm_layers();
    if layers.is_empty() || !net.store.contains(&format!("{}.mu_pop", layers[0])) {
        return Err(Error::NoBatchNorm);
    }
    let mut out = net.clone();
    out.config.norm = *variant;
    out.store.freeze_all();

    use crate::norm::{CALIBRATION_INIT, MLP_HIDDEN};
    for layer in &layers {
        let c = out.store.expect(&format!("{layer}.gamma"))?.tensor.numel();
        match variant {
            NormVariant::Plain => unreachable!(),
            NormVariant::Manual { .. } => {}
            NormVariant::InstCalU => {
                out.store.insert(
                    format!("{layer}.m_mu"),
                    Tensor::full(vec![c], CALIBRATION_INIT),
                    true,
                );
                out.store.insert(
                    format!("{layer}.m_sigma"),
                    Tensor::full(vec![c], CALIBRATION_INIT),
                    true,
                );
            }
            NormVariant::InstCalC { k } => {
                assert!(*k >= 1, "basis count must be >= 1");
                for which in ["mu", "sigma"] {
                    for i in 0..*k {
                        out.store.insert(
                            format!("{layer}.basis_{which}.{i}"),
                            Tensor::full(vec![c], CALIBRATION_INIT),
                            true,
                        );
                    }
                    // hidden layer small random, output layer zero so the
                    // initial coefficients are uniform
                    let mut rng = rng_for(seed, &format!("{layer}.mlp_{which}"));
                    let fan_in = 2 * c;
                    let bound = (1.0 / fan_in as f64).sqrt();
                    let w1: Vec<f64> = (0..fan_in * MLP_HIDDEN)
                        .map(|_| rng.gen_range(-bound..bound))
                        .collect();
                    out.store.insert(
                        format!("{layer}.mlp_{which}.w1"),
                        Tensor::new(vec![fan_in, MLP_HIDDEN], w1),
                        true,
                    );
                    out.store.insert(
                        format!("{layer}.mlp_{which}.b1"),
                        Tensor::zeros(vec![MLP_HIDDEN]),
                        true,
                    );
                    out.store.insert(
                        format!("{layer}.mlp_{which}.w2"),
                        Tensor::zeros(vec![MLP_HIDDEN, *k]),
                        true,
                    );
                    out.store
                        .insert(format!("{layer}.mlp_{which}.b2"), Tensor::zeros(vec![*k]), true);
                }
            }
        }
    }
    Ok(out)
}
