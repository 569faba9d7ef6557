//! Declarative pseudo-domain / target-domain descriptions and the registry
//! resolving them to augmentation strategies by name.
//!
//! A `DomainSpec` serializes to `{kind, seed, params}`; the same spec and
//! input always reproduce the same output bitwise.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::augment::{AugMixStyle, Augmentor, Identity, NetPerturb, RandColor, WeakDefault};
use crate::corrupt::{Corruption, CorruptionName};
use crate::error::{DataError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DomainKind {
    Identity,
    RandColor,
    AugMixStyle,
    NetPerturb,
    Corruption { name: CorruptionName, severity: u8 },
}

impl DomainKind {
    pub fn name(&self) -> &'static str {
        match self {
            DomainKind::Identity => "identity",
            DomainKind::RandColor => "rand_color",
            DomainKind::AugMixStyle => "augmix_style",
            DomainKind::NetPerturb => "net_perturb",
            DomainKind::Corruption { .. } => "corruption",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub seed: u64,
}

impl DomainSpec {
    pub fn new(kind: DomainKind, seed: u64) -> Self {
        Self { kind, seed }
    }

    pub fn corruption(name: CorruptionName, severity: u8, seed: u64) -> Self {
        Self {
            kind: DomainKind::Corruption { name, severity },
            seed,
        }
    }

    /// Report label: corruption name for corruptions, kind name otherwise.
    pub fn label(&self) -> String {
        match self.kind {
            DomainKind::Corruption { name, .. } => name.as_str().to_string(),
            k => k.name().to_string(),
        }
    }

    pub fn severity(&self) -> u8 {
        match self.kind {
            DomainKind::Corruption { severity, .. } => severity,
            _ => 0,
        }
    }

    /// Strategy object for this spec from the registry.
    pub fn build(&self) -> Result<Box<dyn Augmentor>> {
        build_augmentor(self.kind)
    }
}

/// Augmentation-strategy registry. Training strategies are addressed by the
/// CLI tokens `default | randcolor | augmix | netperturb`; corruption
/// domains by corruption name plus severity.
pub fn training_strategy_names() -> &'static [&'static str] {
    &["default", "randcolor", "augmix", "netperturb"]
}

/// CLI token -> strong-augmentation domain kind ("default" trains on the
/// weakly-augmented source only).
pub fn training_kind_from_name(name: &str) -> Option<DomainKind> {
    match name {
        "default" | "identity" => Some(DomainKind::Identity),
        "randcolor" => Some(DomainKind::RandColor),
        "augmix" => Some(DomainKind::AugMixStyle),
        "netperturb" => Some(DomainKind::NetPerturb),
        _ => None,
    }
}

pub fn build_augmentor(kind: DomainKind) -> Result<Box<dyn Augmentor>> {
    Ok(match kind {
        DomainKind::Identity => Box::new(Identity),
        DomainKind::RandColor => Box::new(RandColor),
        DomainKind::AugMixStyle => Box::new(AugMixStyle::default()),
        DomainKind::NetPerturb => Box::new(NetPerturb),
        DomainKind::Corruption { name, severity } => Box::new(Corruption::new(name, severity)?),
    })
}

/// The weak scale/crop/flip pipeline applied to the source data during
/// pretraining (and under every strong strategy).
pub fn weak_augmentor() -> Box<dyn Augmentor> {
    Box::new(WeakDefault)
}

// ── serde as {kind, seed, params} ───────────────────────────────────

#[derive(Serialize, Deserialize)]
struct SpecRepr {
    kind: String,
    seed: u64,
    #[serde(default)]
    params: serde_json::Map<String, serde_json::Value>,
}

impl Serialize for DomainSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut params = serde_json::Map::new();
        if let DomainKind::Corruption { name, severity } = self.kind {
            params.insert("name".into(), name.as_str().into());
            params.insert("severity".into(), (severity as u64).into());
        }
        SpecRepr {
            kind: self.kind.name().to_string(),
            seed: self.seed,
            params,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DomainSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = SpecRepr::deserialize(deserializer)?;
        let kind = match repr.kind.as_str() {
            "identity" => DomainKind::Identity,
            "rand_color" => DomainKind::RandColor,
            "augmix_style" => DomainKind::AugMixStyle,
            "net_perturb" => DomainKind::NetPerturb,
            "corruption" => {
                let name = repr
                    .params
                    .get("name")
                    .and_then(|v| v.as_str())
                    .ok_or_else(|| D::Error::custom("corruption params need a name"))?;
                let severity = repr
                    .params
                    .get("severity")
                    .and_then(|v| v.as_u64())
                    .ok_or_else(|| D::Error::custom("corruption params need a severity"))?;
                DomainKind::Corruption {
                    name: CorruptionName::parse(name)
                        .ok_or_else(|| D::Error::custom(DataError::UnknownCorruption(name.into()).to_string()))?,
                    severity: severity as u8,
                }
            }
            other => return Err(D::Error::custom(DataError::UnknownKind(other.into()).to_string())),
        };
        Ok(DomainSpec {
            kind,
            seed: repr.seed,
        })
    }
}
