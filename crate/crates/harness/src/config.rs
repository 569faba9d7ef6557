//! Run configuration: one JSON file plus flat dotted-key overrides. The
//! fully resolved config is serialized into the output directory and its
//! hash is stamped into every report, so equal hashes mean identical
//! configurations.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use instcal_data::corrupt::CorruptionName;
use instcal_data::{DomainKind, DomainSpec};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// 0 = all available cores (evaluation only; training is sequential).
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub pretrain: Option<TrainSection>,
    #[serde(default)]
    pub instcal: Option<InstcalSection>,
    #[serde(default)]
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            model: ModelSection::default(),
            data: DataSection::default(),
            pretrain: None,
            instcal: None,
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub widths: Vec<usize>,
    pub n_classes: usize,
    pub epsilon: f64,
    pub momentum: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            widths: vec![16, 32, 32, 16],
            n_classes: 5,
            epsilon: 1e-5,
            momentum: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    /// Training pool size (distinct scene seeds).
    pub train_images: usize,
    pub val_images: usize,
    /// Evaluation images per domain.
    pub eval_images: usize,
    pub n_shapes_min: usize,
    pub n_shapes_max: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            train_images: 2000,
            val_images: 100,
            eval_images: 200,
            n_shapes_min: 2,
            n_shapes_max: 5,
        }
    }
}

/// SGD + polynomial-decay training stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSection {
    pub total_iters: u64,
    #[serde(default = "default_pretrain_lr")]
    pub lr: f64,
    #[serde(default = "default_poly_power")]
    pub poly_power: f64,
    #[serde(default = "default_sgd_momentum")]
    pub sgd_momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_pretrain_batch")]
    pub batch_size: usize,
    /// Augmentation strategy name (default | randcolor | augmix | netperturb).
    #[serde(default = "default_weak_aug")]
    pub augmentation: String,
    /// Loss/curve logging interval.
    #[serde(default = "default_log_every")]
    pub log_every: u64,
}

fn default_pretrain_lr() -> f64 {
    1e-2
}
fn default_poly_power() -> f64 {
    0.9
}
fn default_sgd_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    5e-4
}
fn default_pretrain_batch() -> usize {
    4
}
fn default_weak_aug() -> String {
    "default".into()
}
fn default_log_every() -> u64 {
    50
}

impl TrainSection {
    pub fn desk_default_pretrain() -> Self {
        Self {
            total_iters: 8000,
            lr: default_pretrain_lr(),
            poly_power: default_poly_power(),
            sgd_momentum: default_sgd_momentum(),
            weight_decay: default_weight_decay(),
            batch_size: default_pretrain_batch(),
            augmentation: default_weak_aug(),
            log_every: default_log_every(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct InstcalSection {
    /// Pretrained (unconverted) checkpoint to convert and calibrate.
    pub checkpoint: Option<std::path::PathBuf>,
    /// `u` or `c`.
    pub variant: String,
    pub basis: usize,
    pub total_iters: u64,
    /// Learning rate; 0 selects the variant default (2.5e-3 for the
    /// unconditional layer, 2.5e-2 for the conditional one).
    pub lr: f64,
    pub poly_power: f64,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub augmentation: String,
    pub log_every: u64,
}

impl Default for InstcalSection {
    fn default() -> Self {
        Self {
            checkpoint: None,
            variant: "u".into(),
            basis: 8,
            total_iters: 4000,
            lr: 0.0,
            poly_power: default_poly_power(),
            sgd_momentum: default_sgd_momentum(),
            weight_decay: default_weight_decay(),
            batch_size: 1,
            augmentation: "netperturb".into(),
            log_every: default_log_every(),
        }
    }
}

pub const INSTCAL_U_LR: f64 = 2.5e-3;
pub const INSTCAL_C_LR: f64 = 2.5e-2;

impl InstcalSection {
    pub fn effective_lr(&self) -> f64 {
        if self.lr > 0.0 {
            self.lr
        } else if self.variant == "c" {
            INSTCAL_C_LR
        } else {
            INSTCAL_U_LR
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub experiment: String,
    /// Checkpoints by role; experiments use the roles they need.
    pub pretrained_checkpoint: Option<PathBuf>,
    pub instcal_u_checkpoint: Option<PathBuf>,
    pub instcal_c_checkpoint: Option<PathBuf>,
    /// Evaluation domains; empty selects the default corruption set.
    pub domains: Vec<DomainSpec>,
    pub manual_m: f64,
    pub m_values: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub entropy_steps: usize,
    pub entropy_lr: f64,
    pub ece_bins: usize,
    pub dump_masks: bool,
    /// Images dumped per domain when dump_masks is set.
    pub dump_count: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            experiment: "main".into(),
            pretrained_checkpoint: None,
            instcal_u_checkpoint: None,
            instcal_c_checkpoint: None,
            domains: Vec::new(),
            manual_m: 0.1,
            m_values: (0..=10).map(|i| i as f64 / 10.0).collect(),
            batch_sizes: vec![1, 2, 4, 8, 16],
            entropy_steps: 1,
            entropy_lr: 1e-3,
            ece_bins: instcal_data::metrics::DEFAULT_ECE_BINS,
            dump_masks: false,
            dump_count: 4,
        }
    }
}

/// The versioned default evaluation set (v1): the uncorrupted source split
/// plus four corruption families at severities where statistics calibration
/// has a genuine wound to heal. channel_swap is available through explicit
/// domain configs; as a pure label-identity permutation its calibration gap
/// is noise-level and it is not part of the default trend set.
pub fn default_eval_domains(seed: u64) -> Vec<DomainSpec> {
    vec![
        DomainSpec::new(DomainKind::Identity, seed),
        DomainSpec::corruption(CorruptionName::Fog, 1, seed),
        DomainSpec::corruption(CorruptionName::HueRotate, 3, seed),
        DomainSpec::corruption(CorruptionName::Contrast, 2, seed),
        DomainSpec::corruption(CorruptionName::GaussNoise, 3, seed),
    ]
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("invalid JSON in {}: {e}", path.display())))?;
        apply_overrides(&mut value, overrides)?;
        serde_json::from_value(value).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn from_overrides(overrides: &[(String, String)]) -> Result<Self> {
        let mut value = serde_json::json!({});
        apply_overrides(&mut value, overrides)?;
        serde_json::from_value(value).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn require_pretrain(&self) -> Result<&TrainSection> {
        self.pretrain
            .as_ref()
            .ok_or_else(|| HarnessError::Config("missing required key pretrain.total_iters".into()))
    }

    pub fn require_instcal(&self) -> Result<&InstcalSection> {
        self.instcal
            .as_ref()
            .ok_or_else(|| HarnessError::Config("missing required key instcal (train-instcal section)".into()))
    }

    pub fn eval_domains(&self) -> Vec<DomainSpec> {
        if self.eval.domains.is_empty() {
            default_eval_domains(self.seed)
        } else {
            self.eval.domains.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.pretrain {
            validate_train(p, "pretrain")?;
        }
        if let Some(i) = &self.instcal {
            if i.total_iters < 1 {
                return Err(HarnessError::Config("instcal.total_iters must be >= 1".into()));
            }
            if i.batch_size < 1 {
                return Err(HarnessError::Config("instcal.batch_size must be >= 1".into()));
            }
            if !matches!(i.variant.as_str(), "u" | "c") {
                return Err(HarnessError::Config(format!(
                    "instcal.variant must be u or c, got {}",
                    i.variant
                )));
            }
            if i.basis < 1 {
                return Err(HarnessError::Config("instcal.basis must be >= 1".into()));
            }
            if instcal_data::domains::training_kind_from_name(&i.augmentation).is_none() {
                return Err(HarnessError::Config(format!(
                    "unknown augmentation {}",
                    i.augmentation
                )));
            }
        }
        if self.model.widths.len() != 4 {
            return Err(HarnessError::Config("model.widths must list 4 stages".into()));
        }
        Ok(())
    }

    /// Canonical JSON of the resolved config.
    pub fn resolved_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hash stamped into artifacts: first 16 hex chars of the sha-256 of
    /// the resolved JSON.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.resolved_json().as_bytes());
        let d = h.finalize();
        hex16(&d)
    }

    pub fn write_resolved(&self, out_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(out_dir)?;
        std::fs::write(out_dir.join("resolved_config.json"), self.resolved_json())?;
        Ok(())
    }

    pub fn model_config(&self) -> instcal_core::net::SegNetConfig {
        instcal_core::net::SegNetConfig {
            widths: self.model.widths.clone(),
            n_classes: self.model.n_classes,
            norm: instcal_core::norm::NormVariant::Plain,
            epsilon: self.model.epsilon,
            momentum: self.model.momentum,
        }
    }
}

fn validate_train(t: &TrainSection, section: &str) -> Result<()> {
    if t.total_iters < 1 {
        return Err(HarnessError::Config(format!(
            "{section}.total_iters must be >= 1"
        )));
    }
    if t.lr <= 0.0 {
        return Err(HarnessError::Config(format!("{section}.lr must be > 0")));
    }
    if t.batch_size < 1 {
        return Err(HarnessError::Config(format!(
            "{section}.batch_size must be >= 1"
        )));
    }
    if instcal_data::domains::training_kind_from_name(&t.augmentation).is_none() {
        return Err(HarnessError::Config(format!(
            "unknown augmentation {}",
            t.augmentation
        )));
    }
    Ok(())
}

fn hex16(digest: &[u8]) -> String {
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Set `a.b.c=value` paths in the raw JSON; values parse as JSON when
/// possible and fall back to strings.
pub fn apply_overrides(value: &mut serde_json::Value, overrides: &[(String, String)]) -> Result<()> {
    for (key, raw) in overrides {
        let parsed: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
        let parts: Vec<&str> = key.split('.').collect();
        set_path(value, &parts, parsed).map_err(|_| {
            HarnessError::Config(format!("override {key}: path is not an object"))
        })?;
    }
    Ok(())
}

fn set_path(value: &mut serde_json::Value, parts: &[&str], v: serde_json::Value) -> std::result::Result<(), ()> {
    let obj = value.as_object_mut().ok_or(())?;
    if parts.len() == 1 {
        obj.insert(parts[0].to_string(), v);
        return Ok(());
    }
    let child = obj
        .entry(parts[0].to_string())
        .or_insert_with(|| serde_json::json!({}));
    set_path(child, &parts[1..], v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_total_iters_names_the_key() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"pretrain": {"lr": 0.01}}"#).unwrap();
        let err = RunConfig::load(&p, &[]).unwrap_err();
        assert!(err.to_string().contains("total_iters"), "{err}");
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"pretrain": {"total_iters": 100}}"#).unwrap();
        let cfg = RunConfig::load(
            &p,
            &[
                ("pretrain.total_iters".into(), "7".into()),
                ("seed".into(), "3".into()),
                ("instcal.variant".into(), "c".into()),
            ],
        )
        .unwrap();
        assert_eq!(cfg.require_pretrain().unwrap().total_iters, 7);
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.instcal.unwrap().variant, "c");
    }

    #[test]
    fn hash_changes_with_config() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn effective_lr_follows_variant() {
        let mut s = InstcalSection::default();
        assert_eq!(s.effective_lr(), INSTCAL_U_LR);
        s.variant = "c".into();
        assert_eq!(s.effective_lr(), INSTCAL_C_LR);
        s.lr = 0.5;
        assert_eq!(s.effective_lr(), 0.5);
    }

    #[test]
    fn default_domains_cover_source_and_corruptions() {
        let d = default_eval_domains(9);
        assert_eq!(d.len(), 5);
        assert_eq!(d[0].label(), "identity");
        assert!(d.iter().skip(1).all(|s| (1..=3).contains(&s.severity())));
        assert!(d.iter().all(|s| s.seed == 9));
    }

    #[test]
    fn validation_rejects_unknown_augmentation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(
            &p,
            r#"{"instcal": {"augmentation": "fogstorm"}}"#,
        )
        .unwrap();
        let cfg = RunConfig::load(&p, &[]).unwrap();
        assert!(cfg.validate().is_err());
    }
}
