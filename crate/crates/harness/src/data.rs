//! Deterministic dataset streams: disjoint train/val/test scene pools
//! derived from the global seed, and manifest writing.

use std::io::Write;
use std::path::Path;

use instcal_core::rng::mix;
use instcal_core::{LabelBatch, Tensor};
use instcal_data::image::{Mask, IGNORE_LABEL};
use instcal_data::scenes::{generate_scene, ManifestLine, Palette, Sample};
use instcal_data::DomainSpec;

use crate::config::RunConfig;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn tag(&self) -> u64 {
        match self {
            Split::Train => 0x7a1,
            Split::Val => 0x7a2,
            Split::Test => 0x7a3,
        }
    }
}

pub struct ScenePool {
    pub seed: u64,
    pub split: Split,
    pub count: usize,
    pub shapes: (usize, usize),
    pub palette: Palette,
}

impl ScenePool {
    pub fn new(cfg: &RunConfig, split: Split) -> Self {
        let count = match split {
            Split::Train => cfg.data.train_images,
            Split::Val => cfg.data.val_images,
            Split::Test => cfg.data.eval_images,
        };
        Self {
            seed: cfg.seed,
            split,
            count,
            shapes: (cfg.data.n_shapes_min, cfg.data.n_shapes_max),
            palette: Palette::default(),
        }
    }

    pub fn scene_seed(&self, index: usize) -> u64 {
        mix(mix(self.seed, self.split.tag()), index as u64)
    }

    pub fn scene(&self, index: usize) -> Sample {
        debug_assert!(index < self.count);
        generate_scene(self.scene_seed(index), self.shapes, &self.palette)
    }
}

/// Apply a domain to a sample; the augmentation stream is keyed by the
/// domain seed and the scene seed so outputs are order-independent.
pub fn apply_domain(spec: &DomainSpec, sample: &Sample) -> Result<(Tensor, Mask)> {
    let aug = spec.build()?;
    Ok(aug.apply(&sample.image, &sample.mask, mix(spec.seed, sample.seed)))
}

/// Stack per-image masks into the loss's batch layout.
pub fn label_batch(masks: &[&Mask]) -> LabelBatch {
    let (h, w) = (masks[0].height, masks[0].width);
    let mut labels = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        assert_eq!((m.height, m.width), (h, w));
        labels.extend_from_slice(&m.data);
    }
    LabelBatch::new(masks.len(), h, w, labels)
}

pub const IGNORE: u32 = IGNORE_LABEL;

/// JSON-lines manifest of an evaluation set.
pub fn write_manifest(path: &Path, pool: &ScenePool, domain: &DomainSpec) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for i in 0..pool.count {
        let line = ManifestLine {
            seed: pool.scene_seed(i),
            domain: *domain,
        };
        writeln!(f, "{}", serde_json::to_string(&line)?)?;
    }
    Ok(())
}
