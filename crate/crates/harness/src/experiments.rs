//! Evaluation experiments behind one trait, selected by name from the CLI:
//! `main` (method x domain reports), `sweep-m` (scalar-strength curve),
//! `batch-stats` (shared-batch-statistics probe), `entropy` (per-instance
//! entropy-minimization combination).

use std::path::Path;

use instcal_core::checkpoint;
use instcal_core::net::SegNet;
use instcal_core::norm::NormVariant;
use instcal_data::metrics::MetricsReport;
use instcal_data::ppm;

use crate::config::RunConfig;
use crate::data::{apply_domain, ScenePool, Split};
use crate::error::{HarnessError, Result};
use crate::evaluate;
use crate::report;

pub struct ExperimentCtx<'a> {
    pub config: &'a RunConfig,
    pub out_dir: &'a Path,
    pub config_hash: String,
}

pub trait Experiment: Send + Sync {
    fn name(&self) -> &'static str;
    /// Run and write artifacts; returns the standard report rows (possibly
    /// empty for experiments with bespoke tables).
    fn run(&self, ctx: &ExperimentCtx) -> Result<Vec<MetricsReport>>;
}

pub fn experiment_names() -> &'static [&'static str] {
    &["main", "sweep-m", "batch-stats", "entropy"]
}

pub fn build_experiment(name: &str) -> Option<Box<dyn Experiment + Send + Sync>> {
    match name {
        "main" => Some(Box::new(MainExperiment)),
        "sweep-m" => Some(Box::new(SweepExperiment)),
        "batch-stats" => Some(Box::new(BatchStatsExperiment)),
        "entropy" => Some(Box::new(EntropyExperiment)),
        _ => None,
    }
}

fn load_role(path: &Option<std::path::PathBuf>, role: &str) -> Result<SegNet> {
    let p = path
        .as_ref()
        .ok_or_else(|| HarnessError::Config(format!("eval.{role} checkpoint path missing")))?;
    Ok(checkpoint::load(p)?)
}

/// Rows for {pretrained, manual-m, instcal-u, instcal-c} x domains, using
/// whichever checkpoints the config provides.
pub struct MainExperiment;

impl Experiment for MainExperiment {
    fn name(&self) -> &'static str {
        "main"
    }

    fn run(&self, ctx: &ExperimentCtx) -> Result<Vec<MetricsReport>> {
        let cfg = ctx.config;
        let domains = cfg.eval_domains();
        let plain = load_role(&cfg.eval.pretrained_checkpoint, "pretrained_checkpoint")?;
        if plain.config.norm != NormVariant::Plain {
            return Err(HarnessError::Config(
                "eval.pretrained_checkpoint must be an unconverted model".into(),
            ));
        }
        let mut rows = Vec::new();
        rows.extend(evaluate::evaluate(
            &plain,
            "pretrained",
            &domains,
            cfg,
            &ctx.config_hash,
        )?);
        let mut manual = plain.clone();
        manual.config.norm = NormVariant::Manual { m: cfg.eval.manual_m };
        rows.extend(evaluate::evaluate(
            &manual,
            &format!("manual-{:.1}", cfg.eval.manual_m),
            &domains,
            cfg,
            &ctx.config_hash,
        )?);
        if let Some(p) = &cfg.eval.instcal_u_checkpoint {
            let net = checkpoint::load(p)?;
            rows.extend(evaluate::evaluate(&net, "instcal-u", &domains, cfg, &ctx.config_hash)?);
        }
        if let Some(p) = &cfg.eval.instcal_c_checkpoint {
            let net = checkpoint::load(p)?;
            rows.extend(evaluate::evaluate(&net, "instcal-c", &domains, cfg, &ctx.config_hash)?);
        }
        report::write_report_csv(&ctx.out_dir.join("main_report.csv"), &rows)?;
        report::write_report_json(&ctx.out_dir.join("main_report.json"), &rows)?;
        if cfg.eval.dump_masks {
            dump_qualitative(ctx, &plain)?;
        }
        Ok(rows)
    }
}

/// mIoU per (m, domain) for m in the configured sweep values.
pub struct SweepExperiment;

impl Experiment for SweepExperiment {
    fn name(&self) -> &'static str {
        "sweep-m"
    }

    fn run(&self, ctx: &ExperimentCtx) -> Result<Vec<MetricsReport>> {
        let cfg = ctx.config;
        let domains = cfg.eval_domains();
        let plain = load_role(&cfg.eval.pretrained_checkpoint, "pretrained_checkpoint")?;
        let rows = evaluate::sweep_manual_m(
            &plain,
            &domains,
            &cfg.eval.m_values,
            cfg,
            &ctx.config_hash,
        )?;
        report::write_report_csv(&ctx.out_dir.join("sweep_m.csv"), &rows)?;
        report::write_report_json(&ctx.out_dir.join("sweep_m.json"), &rows)?;
        Ok(rows)
    }
}

/// Shared-batch-statistics table over a mixed-domain stream.
pub struct BatchStatsExperiment;

impl Experiment for BatchStatsExperiment {
    fn name(&self) -> &'static str {
        "batch-stats"
    }

    fn run(&self, ctx: &ExperimentCtx) -> Result<Vec<MetricsReport>> {
        let cfg = ctx.config;
        let domains = cfg.eval_domains();
        let net = if let Some(p) = &cfg.eval.instcal_u_checkpoint {
            checkpoint::load(p)?
        } else {
            load_role(&cfg.eval.instcal_c_checkpoint, "instcal_u_checkpoint")?
        };
        let table = evaluate::batch_stats_experiment(&net, &domains, &cfg.eval.batch_sizes, cfg)?;
        let mut csv = String::from("batch_size,miou,config_hash\n");
        for (bs, miou) in &table {
            csv.push_str(&format!("{bs},{miou:.6},{}\n", ctx.config_hash));
        }
        std::fs::write(ctx.out_dir.join("batch_stats.csv"), csv)?;
        Ok(Vec::new())
    }
}

/// InstCal plus per-instance entropy minimization, with the plain InstCal
/// rows alongside for comparison.
pub struct EntropyExperiment;

impl Experiment for EntropyExperiment {
    fn name(&self) -> &'static str {
        "entropy"
    }

    fn run(&self, ctx: &ExperimentCtx) -> Result<Vec<MetricsReport>> {
        let cfg = ctx.config;
        let domains = cfg.eval_domains();
        let net = load_role(&cfg.eval.instcal_u_checkpoint, "instcal_u_checkpoint")?;
        let mut rows = evaluate::evaluate(&net, "instcal-u", &domains, cfg, &ctx.config_hash)?;
        rows.extend(evaluate::evaluate_with_entropy(
            &net,
            "instcal-u+entmin",
            &domains,
            cfg,
            &ctx.config_hash,
        )?);
        report::write_report_csv(&ctx.out_dir.join("entropy_report.csv"), &rows)?;
        report::write_report_json(&ctx.out_dir.join("entropy_report.json"), &rows)?;
        Ok(rows)
    }
}

/// Input / ground truth / prediction triptychs for the first few
/// evaluation images of every domain.
fn dump_qualitative(ctx: &ExperimentCtx, net: &SegNet) -> Result<()> {
    let cfg = ctx.config;
    let pool = ScenePool::new(cfg, Split::Test);
    let palette = instcal_data::scenes::Palette::default();
    let dir = ctx.out_dir.join("masks");
    std::fs::create_dir_all(&dir)?;
    for domain in cfg.eval_domains() {
        for i in 0..cfg.eval.dump_count.min(pool.count) {
            let sample = pool.scene(i);
            let (image, mask) = apply_domain(&domain, &sample)?;
            let pred = evaluate::predict(net, &image)?;
            let panels = vec![
                ppm::image_to_rgb8(&image),
                ppm::mask_to_rgb8(&mask, &palette),
                ppm::mask_to_rgb8(&pred.mask, &palette),
            ];
            let name = format!("{}_s{}_{i}.ppm", domain.label(), domain.severity());
            ppm::write_triptych_tagged(&dir.join(name), &panels, Some(&ctx.config_hash))?;
        }
    }
    Ok(())
}
