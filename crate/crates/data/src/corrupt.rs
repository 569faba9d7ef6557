//! Target-domain corruptions with three severity levels each. The severity
//! tables are versioned constants (see `docs/domains.md`) so reports stay
//! comparable across runs; parameterizations are disjoint from the training
//! augmentations so evaluation domains are genuinely unseen.

use instcal_core::rng::{mix as seed_mix, rng_from};
use instcal_core::Tensor;
use rand_distr::{Distribution, Normal};

use crate::augment::Augmentor;
use crate::error::{DataError, Result};
use crate::image::{clamp01, image_dims, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorruptionName {
    Fog,
    HueRotate,
    Contrast,
    GaussNoise,
    ChannelSwap,
}

impl CorruptionName {
    pub fn as_str(&self) -> &'static str {
        match self {
            CorruptionName::Fog => "fog",
            CorruptionName::HueRotate => "hue_rotate",
            CorruptionName::Contrast => "contrast",
            CorruptionName::GaussNoise => "gauss_noise",
            CorruptionName::ChannelSwap => "channel_swap",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fog" => Some(Self::Fog),
            "hue_rotate" => Some(Self::HueRotate),
            "contrast" => Some(Self::Contrast),
            "gauss_noise" => Some(Self::GaussNoise),
            "channel_swap" => Some(Self::ChannelSwap),
            _ => None,
        }
    }

    pub fn all() -> &'static [CorruptionName] {
        &[
            Self::Fog,
            Self::HueRotate,
            Self::Contrast,
            Self::GaussNoise,
            Self::ChannelSwap,
        ]
    }
}

/// Fog blend weights toward white per severity.
pub const FOG_WEIGHTS: [f64; 3] = [0.3, 0.5, 0.7];
/// Hue rotation angle (degrees) per severity.
pub const HUE_ANGLES: [f64; 3] = [30.0, 60.0, 90.0];
/// Contrast reduction factor per severity.
pub const CONTRAST_FACTORS: [f64; 3] = [0.55, 0.4, 0.25];
/// Gaussian noise sigma per severity.
pub const NOISE_SIGMAS: [f64; 3] = [0.04, 0.08, 0.12];
/// Channel permutation per severity; each is its own inverse.
pub const SWAP_PERMS: [[usize; 3]; 3] = [[0, 2, 1], [1, 0, 2], [2, 1, 0]];

pub struct Corruption {
    pub name: CorruptionName,
    pub severity: u8,
}

impl Corruption {
    pub fn new(name: CorruptionName, severity: u8) -> Result<Self> {
        if !(1..=3).contains(&severity) {
            return Err(DataError::BadSeverity(severity));
        }
        Ok(Self { name, severity })
    }
}

pub fn corrupt(image: &Tensor, name: &str, severity: u8, seed: u64) -> Result<Tensor> {
    let name =
        CorruptionName::parse(name).ok_or_else(|| DataError::UnknownCorruption(name.into()))?;
    let c = Corruption::new(name, severity)?;
    Ok(c.transform(image, seed))
}

impl Corruption {
    pub fn transform(&self, image: &Tensor, seed: u64) -> Tensor {
        let s = (self.severity - 1) as usize;
        let mut out = image.clone();
        match self.name {
            CorruptionName::Fog => {
                let w = FOG_WEIGHTS[s];
                for v in out.data.iter_mut() {
                    *v = (1.0 - w) * *v + w;
                }
            }
            CorruptionName::HueRotate => {
                hue_rotate(&mut out, HUE_ANGLES[s]);
            }
            CorruptionName::Contrast => {
                let f = CONTRAST_FACTORS[s];
                for v in out.data.iter_mut() {
                    *v = (*v - 0.5) * f + 0.5;
                }
            }
            CorruptionName::GaussNoise => {
                let sigma = NOISE_SIGMAS[s];
                let mut rng = rng_from(seed_mix(seed, 0x90153));
                let normal = Normal::new(0.0, sigma).unwrap();
                for v in out.data.iter_mut() {
                    *v += normal.sample(&mut rng);
                }
            }
            CorruptionName::ChannelSwap => {
                let perm = SWAP_PERMS[s];
                let (h, w) = image_dims(image);
                let plane = h * w;
                for (dst_c, &src_c) in perm.iter().enumerate() {
                    out.data[dst_c * plane..(dst_c + 1) * plane]
                        .copy_from_slice(&image.data[src_c * plane..(src_c + 1) * plane]);
                }
            }
        }
        clamp01(&mut out);
        out
    }
}

/// Rotate hue by `degrees` around the gray axis in RGB space (the standard
/// Rodrigues-rotation color matrix), clamping afterwards.
fn hue_rotate(image: &mut Tensor, degrees: f64) {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let third: f64 = 1.0 / 3.0;
    let sq3: f64 = (1.0f64 / 3.0).sqrt();
    // matrix from the axis-angle rotation about (1,1,1)/sqrt(3)
    let a = cos + (1.0 - cos) * third;
    let b = third * (1.0 - cos) - sq3 * sin;
    let c = third * (1.0 - cos) + sq3 * sin;
    let m = [[a, b, c], [c, a, b], [b, c, a]];
    let plane = image.shape[1] * image.shape[2];
    for p in 0..plane {
        let r = image.data[p];
        let g = image.data[plane + p];
        let bl = image.data[2 * plane + p];
        for (ch, row) in m.iter().enumerate() {
            image.data[ch * plane + p] = row[0] * r + row[1] * g + row[2] * bl;
        }
    }
}

impl Augmentor for Corruption {
    fn name(&self) -> &'static str {
        self.name.as_str()
    }
    fn apply(&self, image: &Tensor, mask: &Mask, seed: u64) -> (Tensor, Mask) {
        (self.transform(image, seed), mask.clone())
    }
}
