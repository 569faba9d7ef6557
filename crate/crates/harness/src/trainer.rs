//! The two training stages: source pretraining of the full network with
//! plain BatchNorm, and calibration training that updates only the newly
//! added calibration parameters on strongly-augmented source data.

use instcal_core::graph::Graph;
use instcal_core::net::{build, convert_model, SegNet};
use instcal_core::norm::{Mode, NormVariant, StatsScope};
use instcal_core::rng::{mix, rng_from};
use instcal_core::Error as CoreError;
use rand::Rng;

use crate::config::RunConfig;
use crate::data::{label_batch, ScenePool, Split, IGNORE};
use crate::error::{HarnessError, Result};
use crate::evaluate;
use instcal_data::domains::{training_kind_from_name, weak_augmentor};
use instcal_data::DomainSpec;

#[derive(Debug, Clone, Copy)]
pub struct CurvePoint {
    pub iter: u64,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub net: SegNet,
    pub curve: Vec<CurvePoint>,
    pub final_loss: f64,
}

/// Stage 0: train all parameters on the weakly-augmented source domain.
pub fn pretrain(cfg: &RunConfig) -> Result<TrainOutcome> {
    let section = cfg.require_pretrain()?.clone();
    let strong_kind = training_kind_from_name(&section.augmentation)
        .ok_or_else(|| HarnessError::Config(format!("unknown augmentation {}", section.augmentation)))?;
    let mut net = build(&cfg.model_config(), cfg.seed);
    let pool = ScenePool::new(cfg, Split::Train);
    let weak = weak_augmentor();
    let strong = instcal_data::domains::build_augmentor(strong_kind)?;
    let mut opt = crate::optim::Sgd::new(
        section.lr,
        section.poly_power,
        section.total_iters,
        section.sgd_momentum,
        section.weight_decay,
    );
    let mut pick = rng_from(mix(cfg.seed, 0x9e7a));
    let mut curve = Vec::new();
    let mut last_loss = f64::NAN;

    for iter in 0..section.total_iters {
        let mut images = Vec::with_capacity(section.batch_size);
        let mut masks = Vec::with_capacity(section.batch_size);
        for slot in 0..section.batch_size {
            let sample = pool.scene(pick.gen_range(0..pool.count));
            let aug_seed = mix(mix(cfg.seed, 0xaa0), iter * 131 + slot as u64);
            let (img, mask) = weak.apply(&sample.image, &sample.mask, aug_seed);
            let (img, mask) = strong.apply(&img, &mask, mix(aug_seed, 0x57a0));
            images.push(img);
            masks.push(mask);
        }
        let batch = instcal_data::image::batch_of(&images.iter().collect::<Vec<_>>());
        let labels = label_batch(&masks.iter().collect::<Vec<_>>());

        let mut g = Graph::new();
        let loss = (|| -> Result<(f64, Vec<(String, Vec<f64>)>, Vec<instcal_core::norm::EmaUpdate>)> {
            let trace = net.forward(&mut g, &batch, Mode::Train, StatsScope::PerInstance, true)?;
            let lp = g.log_softmax(trace.logits, 1)?;
            let loss_id = g.nll_seg(lp, &labels, IGNORE)?;
            let loss = g.value(loss_id);
            g.backward(loss_id)?;
            let grads = collect_grads(&g, &trace.leaves);
            Ok((loss, grads, trace.ema))
        })();
        let (loss, grads, ema) = match loss {
            Ok(v) => v,
            Err(HarnessError::Core(CoreError::NonFinite { .. })) => {
                return Err(HarnessError::Divergence { iter })
            }
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(HarnessError::Divergence { iter });
        }
        let lr = opt.step(&mut net.store, &grads, iter);
        net.apply_ema(&ema)?;
        last_loss = loss;
        if iter % section.log_every == 0 || iter + 1 == section.total_iters {
            curve.push(CurvePoint { iter, lr, loss });
        }
    }
    Ok(TrainOutcome {
        net,
        curve,
        final_loss: last_loss,
    })
}

/// Stage (a): convert the norm layers to the requested calibrated variant
/// and optimize only the calibration parameters under strong augmentation.
pub fn train_instcal(cfg: &RunConfig, base: &SegNet) -> Result<TrainOutcome> {
    let section = cfg.require_instcal()?.clone();
    let variant = match section.variant.as_str() {
        "u" => NormVariant::InstCalU,
        "c" => NormVariant::InstCalC { k: section.basis },
        other => return Err(HarnessError::Config(format!("unknown variant {other}"))),
    };
    let net = convert_model(base, &variant, mix(cfg.seed, 0xc0f))?;
    train_calibration(cfg, net, &section)
}

fn train_calibration(
    cfg: &RunConfig,
    mut net: SegNet,
    section: &crate::config::InstcalSection,
) -> Result<TrainOutcome> {
    let strong_kind = training_kind_from_name(&section.augmentation)
        .ok_or_else(|| HarnessError::Config(format!("unknown augmentation {}", section.augmentation)))?;
    let strong = instcal_data::domains::build_augmentor(strong_kind)?;
    let weak = weak_augmentor();
    let pool = ScenePool::new(cfg, Split::Train);
    let mut opt = crate::optim::Sgd::new(
        section.effective_lr(),
        section.poly_power,
        section.total_iters,
        section.sgd_momentum,
        section.weight_decay,
    );
    let mut pick = rng_from(mix(cfg.seed, 0x1c0));
    let mut curve = Vec::new();
    let mut last_loss = f64::NAN;

    for iter in 0..section.total_iters {
        let mut images = Vec::with_capacity(section.batch_size);
        let mut masks = Vec::with_capacity(section.batch_size);
        for slot in 0..section.batch_size {
            let sample = pool.scene(pick.gen_range(0..pool.count));
            let aug_seed = mix(mix(cfg.seed, 0xbb0), iter * 131 + slot as u64);
            let (img, mask) = weak.apply(&sample.image, &sample.mask, aug_seed);
            // pseudo-domain simulation: a fresh strong-augmentation draw per sample
            let (img, mask) = strong.apply(&img, &mask, mix(aug_seed, 0x57a1));
            images.push(img);
            masks.push(mask);
        }
        let batch = instcal_data::image::batch_of(&images.iter().collect::<Vec<_>>());
        let labels = label_batch(&masks.iter().collect::<Vec<_>>());

        let mut g = Graph::new();
        let outcome = (|| -> Result<(f64, Vec<(String, Vec<f64>)>)> {
            let trace = net.forward(&mut g, &batch, Mode::Eval, StatsScope::PerInstance, true)?;
            let lp = g.log_softmax(trace.logits, 1)?;
            let loss_id = g.nll_seg(lp, &labels, IGNORE)?;
            let loss = g.value(loss_id);
            g.backward(loss_id)?;
            Ok((loss, collect_grads(&g, &trace.leaves)))
        })();
        let (loss, grads) = match outcome {
            Ok(v) => v,
            Err(HarnessError::Core(CoreError::NonFinite { .. })) => {
                return Err(HarnessError::Divergence { iter })
            }
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(HarnessError::Divergence { iter });
        }
        let lr = opt.step(&mut net.store, &grads, iter);
        last_loss = loss;
        if iter % section.log_every == 0 || iter + 1 == section.total_iters {
            curve.push(CurvePoint { iter, lr, loss });
        }
    }
    Ok(TrainOutcome {
        net,
        curve,
        final_loss: last_loss,
    })
}

fn collect_grads(g: &Graph, leaves: &[(String, instcal_core::TensorId)]) -> Vec<(String, Vec<f64>)> {
    leaves
        .iter()
        .filter_map(|(name, id)| g.grad(*id).map(|gr| (name.clone(), gr.to_vec())))
        .collect()
}

/// Source-validation mIoU of a model, used as the pretraining quality gate.
pub fn validation_miou(cfg: &RunConfig, net: &SegNet) -> Result<f64> {
    let pool = ScenePool::new(cfg, Split::Val);
    let ident = DomainSpec::new(instcal_data::DomainKind::Identity, cfg.seed);
    let report = evaluate::evaluate_domain(net, "val", &ident, &pool, cfg.eval.ece_bins, "")?;
    Ok(report.miou)
}

pub fn write_curve_csv(
    path: &std::path::Path,
    curve: &[CurvePoint],
    config_hash: &str,
) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "iter,lr,loss,config_hash")?;
    for p in curve {
        writeln!(f, "{},{},{},{}", p.iter, p.lr, p.loss, config_hash)?;
    }
    Ok(())
}

/// Per-layer min/mean/max of the learned calibration strengths, with a
/// marker when values left [0,1]; strengths are deliberately unconstrained,
/// so out-of-range values are reported rather than clamped.
pub fn calibration_summary(net: &SegNet) -> Vec<String> {
    let mut lines = Vec::new();
    for p in net.store.iter() {
        if !(p.name.contains(".m_mu")
            || p.name.contains(".m_sigma")
            || p.name.contains(".basis_"))
        {
            continue;
        }
        let d = &p.tensor.data;
        let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let flag = if lo < 0.0 || hi > 1.0 { "  [outside 0..1]" } else { "" };
        lines.push(format!(
            "{}: mean {:.3} range [{:.3}, {:.3}]{}",
            p.name, mean, lo, hi, flag
        ));
    }
    lines
}
