//! `instcal`: pretrain the source model, train the calibration layers,
//! run the evaluation experiments, and aggregate reports.
//!
//! Exit codes: 0 success, 2 invalid configuration, 3 training divergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use instcal_core::checkpoint;
use instcal_harness::config::RunConfig;
use instcal_harness::error::HarnessError;
use instcal_harness::experiments::{build_experiment, experiment_names, ExperimentCtx};
use instcal_harness::{data, evaluate, report, trainer};

#[derive(Parser)]
#[command(name = "instcal", version, about = "Instance-specific BatchNorm calibration workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// JSON config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Global seed (overrides config and INSTCAL_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for evaluation (0 = all cores); training always runs
    /// single-threaded.
    #[arg(long)]
    workers: Option<usize>,
    /// Dotted-key config overrides, e.g. --set pretrain.lr=0.02
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the source segmentation model with plain BatchNorm.
    Pretrain {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        total_iters: Option<u64>,
    },
    /// Convert a pretrained checkpoint and train its calibration layers.
    TrainInstcal {
        #[command(flatten)]
        common: CommonOpts,
        /// Pretrained (unconverted) checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Calibration variant: u | c.
        #[arg(long)]
        variant: Option<String>,
        /// Strong augmentation: default | randcolor | augmix | netperturb.
        #[arg(long)]
        aug: Option<String>,
        /// Basis count for the conditional variant.
        #[arg(long)]
        basis: Option<usize>,
        #[arg(long)]
        total_iters: Option<u64>,
    },
    /// Run an evaluation experiment over the configured domains.
    Eval {
        #[command(flatten)]
        common: CommonOpts,
        /// Experiment: main | sweep-m | batch-stats | entropy.
        #[arg(long)]
        experiment: Option<String>,
        /// Pretrained (unconverted) checkpoint.
        #[arg(long)]
        pretrained: Option<PathBuf>,
        #[arg(long)]
        instcal_u: Option<PathBuf>,
        #[arg(long)]
        instcal_c: Option<PathBuf>,
        /// Dump input / ground-truth / prediction triptychs.
        #[arg(long)]
        dump_masks: bool,
    },
    /// Aggregate report JSONs in a directory into a markdown summary.
    Report {
        /// Directory containing report JSON files.
        results_dir: PathBuf,
        /// Summary output path (default: <results_dir>/summary.md).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &HarnessError) -> u8 {
    match e {
        HarnessError::Config(_) => 2,
        HarnessError::Divergence { .. } => 3,
        HarnessError::Core(instcal_core::Error::AlreadyConverted { .. })
        | HarnessError::Core(instcal_core::Error::NoBatchNorm)
        | HarnessError::Core(instcal_core::Error::Checkpoint(_)) => 2,
        HarnessError::Data(_) => 2,
        _ => 1,
    }
}

fn load_config(common: &CommonOpts, extra: &[(String, String)]) -> Result<RunConfig, HarnessError> {
    let mut overrides: Vec<(String, String)> = Vec::new();
    // precedence: config file < INSTCAL_SEED < explicit flags/--set
    if let Ok(seed) = std::env::var("INSTCAL_SEED") {
        overrides.push(("seed".into(), seed));
    }
    for s in &common.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("--set needs KEY=VALUE, got {s}")))?;
        overrides.push((k.to_string(), v.to_string()));
    }
    overrides.extend(extra.iter().cloned());
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(w) = common.workers {
        overrides.push(("workers".into(), w.to_string()));
    }
    let cfg = match &common.config {
        Some(path) => RunConfig::load(path, &overrides)?,
        None => RunConfig::from_overrides(&overrides)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Pretrain { common, total_iters } => {
            let mut extra = Vec::new();
            if let Some(t) = total_iters {
                extra.push(("pretrain.total_iters".into(), t.to_string()));
            }
            let cfg = load_config(&common, &extra)?;
            cfg.require_pretrain()?;
            std::fs::create_dir_all(&common.out)?;
            cfg.write_resolved(&common.out)?;
            let outcome = trainer::pretrain(&cfg)?;
            let val = evaluate::with_workers(cfg.workers, || trainer::validation_miou(&cfg, &outcome.net))?;
            let hash = cfg.hash();
            checkpoint::save_with_hash(&common.out.join("checkpoint.ckpt"), &outcome.net, Some(&hash))?;
            trainer::write_curve_csv(&common.out.join("curves.csv"), &outcome.curve, &hash)?;
            println!(
                "pretrain done: final loss {:.4}, source-val mIoU {:.4} -> {}",
                outcome.final_loss,
                val,
                common.out.display()
            );
            Ok(())
        }
        Command::TrainInstcal {
            common,
            checkpoint: ckpt,
            variant,
            aug,
            basis,
            total_iters,
        } => {
            let mut extra = Vec::new();
            if let Some(c) = &ckpt {
                extra.push(("instcal.checkpoint".into(), format!("\"{}\"", c.display())));
            }
            if let Some(v) = &variant {
                extra.push(("instcal.variant".into(), format!("\"{v}\"")));
            }
            if let Some(a) = &aug {
                extra.push(("instcal.augmentation".into(), format!("\"{a}\"")));
            }
            if let Some(b) = basis {
                extra.push(("instcal.basis".into(), b.to_string()));
            }
            if let Some(t) = total_iters {
                extra.push(("instcal.total_iters".into(), t.to_string()));
            }
            let cfg = load_config(&common, &extra)?;
            let section = cfg.require_instcal()?;
            let base_path = section.checkpoint.clone().ok_or_else(|| {
                HarnessError::Config("missing required key instcal.checkpoint".into())
            })?;
            let base = checkpoint::load(&base_path)?;
            std::fs::create_dir_all(&common.out)?;
            cfg.write_resolved(&common.out)?;
            let outcome = trainer::train_instcal(&cfg, &base)?;
            let hash = cfg.hash();
            let name = format!("checkpoint_instcal_{}.ckpt", section.variant);
            checkpoint::save_with_hash(&common.out.join(&name), &outcome.net, Some(&hash))?;
            trainer::write_curve_csv(&common.out.join("instcal_curves.csv"), &outcome.curve, &hash)?;
            for line in trainer::calibration_summary(&outcome.net) {
                println!("  {line}");
            }
            println!(
                "train-instcal done: final loss {:.4} -> {}",
                outcome.final_loss,
                common.out.join(&name).display()
            );
            Ok(())
        }
        Command::Eval {
            common,
            experiment,
            pretrained,
            instcal_u,
            instcal_c,
            dump_masks,
        } => {
            let mut extra = Vec::new();
            if let Some(e) = &experiment {
                extra.push(("eval.experiment".into(), format!("\"{e}\"")));
            }
            if let Some(p) = &pretrained {
                extra.push(("eval.pretrained_checkpoint".into(), format!("\"{}\"", p.display())));
            }
            if let Some(p) = &instcal_u {
                extra.push(("eval.instcal_u_checkpoint".into(), format!("\"{}\"", p.display())));
            }
            if let Some(p) = &instcal_c {
                extra.push(("eval.instcal_c_checkpoint".into(), format!("\"{}\"", p.display())));
            }
            if dump_masks {
                extra.push(("eval.dump_masks".into(), "true".into()));
            }
            let cfg = load_config(&common, &extra)?;
            let exp = build_experiment(&cfg.eval.experiment).ok_or_else(|| {
                HarnessError::Config(format!(
                    "unknown experiment {}; known: {}",
                    cfg.eval.experiment,
                    experiment_names().join(", ")
                ))
            })?;
            std::fs::create_dir_all(&common.out)?;
            cfg.write_resolved(&common.out)?;
            // evaluation-set manifests, one JSONL per domain
            let pool = data::ScenePool::new(&cfg, data::Split::Test);
            for d in cfg.eval_domains() {
                let name = format!("manifest_{}_s{}.jsonl", d.label(), d.severity());
                data::write_manifest(&common.out.join(name), &pool, &d)?;
            }
            let ctx = ExperimentCtx {
                config: &cfg,
                out_dir: &common.out,
                config_hash: cfg.hash(),
            };
            let rows = evaluate::with_workers(cfg.workers, || exp.run(&ctx))?;
            println!(
                "experiment {} done: {} report rows -> {}",
                exp.name(),
                rows.len(),
                common.out.display()
            );
            Ok(())
        }
        Command::Report { results_dir, out } => {
            let rows = report::load_reports_dir(&results_dir)?;
            let md = report::markdown_summary(&rows)?;
            let out = out.unwrap_or_else(|| results_dir.join("summary.md"));
            std::fs::write(&out, &md)?;
            print!("{md}");
            Ok(())
        }
    }
}
