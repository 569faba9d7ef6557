//! Fixed-parameter evaluation: per-image prediction (batch size 1), domain
//! reports, the shared-batch-statistics probe, the manual-strength sweep,
//! and per-instance entropy minimization.
//!
//! Per-image work fans out over a rayon pool; accumulators merge in image
//! order so results are independent of scheduling.

use rayon::prelude::*;

use instcal_core::graph::Graph;
use instcal_core::net::SegNet;
use instcal_core::norm::{Mode, NormVariant, StatsScope};
use instcal_core::Tensor;
use instcal_data::image::{batch_of, Mask};
use instcal_data::metrics::{ConfusionMatrix, EceAccumulator, MetricsReport};
use instcal_data::DomainSpec;

use crate::config::RunConfig;
use crate::data::{apply_domain, ScenePool, Split, IGNORE};
use crate::error::Result;

/// Run a closure inside a worker pool of `n` threads (0 = rayon default).
pub fn with_workers<R: Send>(n: usize, f: impl FnOnce() -> R + Send) -> R {
    if n == 0 {
        f()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("worker pool")
            .install(f)
    }
}

pub struct Prediction {
    pub mask: Mask,
    /// Per-pixel max softmax probability, row-major.
    pub confidence: Vec<f64>,
}

/// Single-image prediction with fixed parameters.
pub fn predict(net: &SegNet, image: &Tensor) -> Result<Prediction> {
    let batch = batch_of(&[image]);
    let mut g = Graph::new();
    let trace = net.forward(&mut g, &batch, Mode::Eval, StatsScope::PerInstance, false)?;
    Ok(extract_prediction(&g, trace.logits, 0))
}

/// Argmax mask and max-probability plane for sample `n` of a logits tensor.
pub fn extract_prediction(g: &Graph, logits: instcal_core::TensorId, n: usize) -> Prediction {
    let shape = g.shape(logits).to_vec();
    let (cl, h, w) = (shape[1], shape[2], shape[3]);
    let data = g.data(logits);
    let plane = h * w;
    let base = n * cl * plane;
    let mut mask = Mask::filled(h, w, 0);
    let mut confidence = vec![0.0; plane];
    for p in 0..plane {
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        let mut max = f64::NEG_INFINITY;
        for c in 0..cl {
            let v = data[base + c * plane + p];
            if v > best_v {
                best_v = v;
                best = c;
            }
            max = max.max(v);
        }
        // stable softmax of the winning logit
        let mut z = 0.0;
        for c in 0..cl {
            z += (data[base + c * plane + p] - max).exp();
        }
        mask.data[p] = best as u32;
        confidence[p] = (best_v - max).exp() / z;
    }
    Prediction { mask, confidence }
}

struct ImageStats {
    confusion: ConfusionMatrix,
    ece: EceAccumulator,
}

/// Evaluate one (method, domain) pair over a scene pool.
pub fn evaluate_domain(
    net: &SegNet,
    method: &str,
    domain: &DomainSpec,
    pool: &ScenePool,
    ece_bins: usize,
    config_hash: &str,
) -> Result<MetricsReport> {
    let n_classes = net.config.n_classes;
    let per_image: Vec<Result<ImageStats>> = (0..pool.count)
        .into_par_iter()
        .map(|i| {
            let sample = pool.scene(i);
            let (image, mask) = apply_domain(domain, &sample)?;
            let pred = predict(net, &image)?;
            let mut confusion = ConfusionMatrix::new(n_classes);
            confusion.record(&pred.mask, &mask, IGNORE);
            let mut ece = EceAccumulator::new(ece_bins);
            for (p, (&conf, &truth)) in pred
                .confidence
                .iter()
                .zip(mask.data.iter())
                .enumerate()
                .map(|(p, t)| (p, t))
            {
                if truth == IGNORE {
                    continue;
                }
                ece.record(conf, pred.mask.data[p] == truth);
            }
            Ok(ImageStats { confusion, ece })
        })
        .collect();

    let mut confusion = ConfusionMatrix::new(n_classes);
    let mut ece = EceAccumulator::new(ece_bins);
    for stats in per_image {
        let s = stats?;
        confusion.merge(&s.confusion);
        ece.merge(&s.ece);
    }
    Ok(MetricsReport {
        method: method.to_string(),
        domain: *domain,
        per_class_iou: confusion.per_class_iou(),
        miou: confusion.miou()?,
        ece: ece.ece(),
        n_images: pool.count,
        config_hash: config_hash.to_string(),
    })
}

/// Reports for one method over a domain list.
pub fn evaluate(
    net: &SegNet,
    method: &str,
    domains: &[DomainSpec],
    cfg: &RunConfig,
    config_hash: &str,
) -> Result<Vec<MetricsReport>> {
    let pool = ScenePool::new(cfg, Split::Test);
    domains
        .iter()
        .map(|d| evaluate_domain(net, method, d, &pool, cfg.eval.ece_bins, config_hash))
        .collect()
}

/// mIoU per scalar calibration strength over the domains (the strength
/// sweep of the manual baseline). Row (m, domain) -> mIoU.
pub fn sweep_manual_m(
    plain: &SegNet,
    domains: &[DomainSpec],
    m_values: &[f64],
    cfg: &RunConfig,
    config_hash: &str,
) -> Result<Vec<MetricsReport>> {
    assert_eq!(
        plain.config.norm,
        NormVariant::Plain,
        "sweep needs an unconverted checkpoint"
    );
    let mut rows = Vec::new();
    for &m in m_values {
        let mut net = plain.clone();
        net.config.norm = NormVariant::Manual { m };
        let method = format!("manual-{m:.1}");
        rows.extend(evaluate(&net, &method, domains, cfg, config_hash)?);
    }
    Ok(rows)
}

/// Replace per-sample statistics with shared per-batch statistics on a
/// mixed-domain stream and report mIoU per batch size. The stream
/// interleaves domains round-robin so batches mix domains.
pub fn batch_stats_experiment(
    net: &SegNet,
    domains: &[DomainSpec],
    batch_sizes: &[usize],
    cfg: &RunConfig,
) -> Result<Vec<(usize, f64)>> {
    let pool = ScenePool::new(cfg, Split::Test);
    // materialize the stream once: (image, mask) in round-robin order
    let stream: Vec<(Tensor, Mask)> = (0..pool.count)
        .into_par_iter()
        .map(|i| {
            let sample = pool.scene(i);
            domains
                .iter()
                .map(|d| apply_domain(d, &sample))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let n_classes = net.config.n_classes;
    let mut out = Vec::new();
    for &bs in batch_sizes {
        let per_chunk: Vec<Result<ConfusionMatrix>> = stream
            .par_chunks(bs)
            .map(|chunk| {
                let images: Vec<&Tensor> = chunk.iter().map(|(i, _)| i).collect();
                let batch = batch_of(&images);
                let mut g = Graph::new();
                let trace = net.forward(&mut g, &batch, Mode::Eval, StatsScope::PerBatch, false)?;
                let mut confusion = ConfusionMatrix::new(n_classes);
                for (n, (_, mask)) in chunk.iter().enumerate() {
                    let pred = extract_prediction(&g, trace.logits, n);
                    confusion.record(&pred.mask, mask, IGNORE);
                }
                Ok(confusion)
            })
            .collect();
        let mut confusion = ConfusionMatrix::new(n_classes);
        for c in per_chunk {
            confusion.merge(&c?);
        }
        out.push((bs, confusion.miou()?));
    }
    Ok(out)
}

pub struct EntropyOutcome {
    pub prediction: Prediction,
    pub entropy_before: f64,
    pub entropy_after: f64,
}

/// Per-instance entropy minimization: clone gamma/beta of every norm layer,
/// take `steps` plain gradient steps on the mean prediction entropy, emit
/// the adapted prediction, and discard the clones.
pub fn entropy_minimize(net: &SegNet, image: &Tensor, steps: usize, lr: f64) -> Result<EntropyOutcome> {
    let mut overlay = net.affine_overlay();
    let batch = batch_of(&[image]);
    let mut entropy_before = f64::NAN;

    for step in 0..steps {
        let mut g = Graph::new();
        let trace = overlay.forward(&mut g, &batch, Mode::Eval, StatsScope::PerInstance, true)?;
        let ent = entropy_objective(&mut g, trace.logits)?;
        let val = g.value(ent);
        if step == 0 {
            entropy_before = val;
        }
        g.backward(ent)?;
        for (name, id) in &trace.leaves {
            if let Some(grad) = g.grad(*id) {
                let p = overlay.store.expect(name)?;
                let updated: Vec<f64> = p
                    .tensor
                    .data
                    .iter()
                    .zip(grad)
                    .map(|(v, g)| v - lr * g)
                    .collect();
                overlay.store.set_data(name, updated)?;
            }
        }
    }

    let mut g = Graph::new();
    let trace = overlay.forward(&mut g, &batch, Mode::Eval, StatsScope::PerInstance, false)?;
    let ent = entropy_objective(&mut g, trace.logits)?;
    let val = g.value(ent);
    if steps == 0 {
        entropy_before = val;
    }
    let entropy_after = val;
    let prediction = extract_prediction(&g, trace.logits, 0);
    Ok(EntropyOutcome {
        prediction,
        entropy_before,
        entropy_after,
    })
}

/// Mean per-pixel prediction entropy of a logits tensor.
fn entropy_objective(g: &mut Graph, logits: instcal_core::TensorId) -> Result<instcal_core::TensorId> {
    let lp = g.log_softmax(logits, 1)?;
    let p = g.exp(lp);
    let plogp = g.mul(p, lp)?;
    let per_pixel = g.reduce_sum(plogp, &[1])?;
    let mean = g.reduce_mean(per_pixel, &[0, 2, 3])?;
    let flat = g.reshape(mean, vec![1]);
    Ok(g.mul_scalar(flat, -1.0))
}

/// Domain reports for the entropy-minimization combination.
pub fn evaluate_with_entropy(
    net: &SegNet,
    method: &str,
    domains: &[DomainSpec],
    cfg: &RunConfig,
    config_hash: &str,
) -> Result<Vec<MetricsReport>> {
    let pool = ScenePool::new(cfg, Split::Test);
    let steps = cfg.eval.entropy_steps;
    let lr = cfg.eval.entropy_lr;
    let n_classes = net.config.n_classes;
    let mut reports = Vec::new();
    for domain in domains {
        let per_image: Vec<Result<ImageStats>> = (0..pool.count)
            .into_par_iter()
            .map(|i| {
                let sample = pool.scene(i);
                let (image, mask) = apply_domain(domain, &sample)?;
                let out = entropy_minimize(net, &image, steps, lr)?;
                let mut confusion = ConfusionMatrix::new(n_classes);
                confusion.record(&out.prediction.mask, &mask, IGNORE);
                let mut ece = EceAccumulator::new(cfg.eval.ece_bins);
                for (p, &truth) in mask.data.iter().enumerate() {
                    if truth == IGNORE {
                        continue;
                    }
                    ece.record(out.prediction.confidence[p], out.prediction.mask.data[p] == truth);
                }
                Ok(ImageStats { confusion, ece })
            })
            .collect();
        let mut confusion = ConfusionMatrix::new(n_classes);
        let mut ece = EceAccumulator::new(cfg.eval.ece_bins);
        for s in per_image {
            let s = s?;
            confusion.merge(&s.confusion);
            ece.merge(&s.ece);
        }
        reports.push(MetricsReport {
            method: method.to_string(),
            domain: *domain,
            per_class_iou: confusion.per_class_iou(),
            miou: confusion.miou()?,
            ece: ece.ece(),
            n_images: pool.count,
            config_hash: config_hash.to_string(),
        });
    }
    Ok(reports)
}
