//! Augmentation strategies behind the [`Augmentor`] trait: the weak default
//! pipeline, the color-only random composition, the chain-mixing strategy,
//! and the network-perturbation strategy standing in for feature-space
//! augmentation at desk scale.

use instcal_core::conv::conv2d_forward;
use instcal_core::rng::{mix as seed_mix, rng_from};
use instcal_core::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::color_ops::{apply as apply_color, sample_op, COLOR_OP_COUNT};
use crate::geometry;
use crate::image::{clamp01, image_dims, Mask};

/// A label-preserving augmentation: color-only strategies never touch the
/// mask, geometric ones transform image and mask identically. Deterministic
/// in (image, mask, seed).
pub trait Augmentor: Send + Sync {
    fn name(&self) -> &'static str;
    fn apply(&self, image: &Tensor, mask: &Mask, seed: u64) -> (Tensor, Mask);
}

pub struct Identity;

impl Augmentor for Identity {
    fn name(&self) -> &'static str {
        "identity"
    }
    fn apply(&self, image: &Tensor, mask: &Mask, _seed: u64) -> (Tensor, Mask) {
        (image.clone(), mask.clone())
    }
}

/// Weak default pipeline: random horizontal flip plus random zoom-crop.
pub struct WeakDefault;

impl Augmentor for WeakDefault {
    fn name(&self) -> &'static str {
        "default"
    }
    fn apply(&self, image: &Tensor, mask: &Mask, seed: u64) -> (Tensor, Mask) {
        let mut rng = rng_from(seed_mix(seed, 0x7ead));
        let (mut img, mut m) = if rng.gen_bool(0.5) {
            geometry::hflip(image, mask)
        } else {
            (image.clone(), mask.clone())
        };
        let scale = rng.gen_range(1.0..1.25);
        let (fy, fx) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let (i2, m2) = geometry::zoom_crop(&img, &m, scale, fy, fx);
        img = i2;
        m = m2;
        (img, m)
    }
}

/// Two color operations drawn uniformly with replacement at random
/// magnitudes.
pub struct RandColor;

pub const RAND_COLOR_OPS: usize = 2;

impl Augmentor for RandColor {
    fn name(&self) -> &'static str {
        "randcolor"
    }
    fn apply(&self, image: &Tensor, mask: &Mask, seed: u64) -> (Tensor, Mask) {
        let mut rng = rng_from(seed_mix(seed, 0xc01));
        let mut img = image.clone();
        for _ in 0..RAND_COLOR_OPS {
            let idx = rng.gen_range(0..COLOR_OP_COUNT);
            let op = sample_op(idx, &mut rng);
            img = apply_color(op, &img);
        }
        (img, mask.clone())
    }
}

/// Chain-mixing strategy: three color chains of depth 1, 2 and 3 combined
/// with Dirichlet weights, blended with the input by a Beta-sampled weight.
/// A mild geometric jitter (translate <= 10%, rotate <= 15 deg) is sampled
/// once per call and applied identically to image and mask before the color
/// chains, so the loss target stays the transformed original annotation.
/// No consistency loss is involved, only the augmentation.
pub struct AugMixStyle {
    pub width: usize,
    pub dirichlet_alpha: f64,
    pub beta_alpha: f64,
}

impl Default for AugMixStyle {
    fn default() -> Self {
        Self {
            width: 3,
            dirichlet_alpha: 1.0,
            beta_alpha: 1.0,
        }
    }
}

impl Augmentor for AugMixStyle {
    fn name(&self) -> &'static str {
        "augmix"
    }
    fn apply(&self, image: &Tensor, mask: &Mask, seed: u64) -> (Tensor, Mask) {
        let mut rng = rng_from(seed_mix(seed, 0xa06));
        // geometric jitter, hoisted out of the pixel-mixed chains
        let (base_img, base_mask) = match rng.gen_range(0..3u32) {
            0 => {
                let (h, w) = image_dims(image);
                let dy = rng.gen_range(-(h as i32) / 10..=h as i32 / 10);
                let dx = rng.gen_range(-(w as i32) / 10..=w as i32 / 10);
                geometry::translate(image, mask, dy, dx)
            }
            1 => {
                let deg = rng.gen_range(-15.0..15.0);
                geometry::rotate(image, mask, deg)
            }
            _ => (image.clone(), mask.clone()),
        };

        let weights = dirichlet(&mut rng, self.width, self.dirichlet_alpha);
        let mut mixed = Tensor::zeros(base_img.shape.clone());
        for (chain_idx, w) in weights.iter().enumerate() {
            let mut chained = base_img.clone();
            for _ in 0..=chain_idx {
                let idx = rng.gen_range(0..COLOR_OP_COUNT);
                let op = sample_op(idx, &mut rng);
                chained = apply_color(op, &chained);
            }
            for (acc, v) in mixed.data.iter_mut().zip(&chained.data) {
                *acc += w * v;
            }
        }
        let t = beta(&mut rng, self.beta_alpha, self.beta_alpha);
        let mut out = base_img.clone();
        for (o, m) in out.data.iter_mut().zip(&mixed.data) {
            *o = (1.0 - t) * *o + t * m;
        }
        clamp01(&mut out);
        (out, base_mask)
    }
}

/// Dirichlet(alpha,...,alpha) via normalized Gamma draws; for alpha = 1 the
/// Gamma reduces to Exp(1).
fn dirichlet(rng: &mut ChaCha8Rng, n: usize, alpha: f64) -> Vec<f64> {
    use rand_distr::{Distribution, Gamma};
    let gamma = Gamma::new(alpha, 1.0).expect("valid gamma");
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng).max(1e-12)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / total).collect()
}

fn beta(rng: &mut ChaCha8Rng, a: f64, b: f64) -> f64 {
    use rand_distr::{Distribution, Gamma};
    let ga = Gamma::new(a, 1.0).unwrap().sample(rng).max(1e-12);
    let gb = Gamma::new(b, 1.0).unwrap().sample(rng).max(1e-12);
    ga / (ga + gb)
}

/// Feature-perturbation strategy: the image passes through a small random
/// conv encoder-decoder (3 -> 8 -> 8 -> 3, weights drawn once per seed)
/// whose intermediate activations get random per-channel scaling in
/// [0.5, 2], sign flips (p = 0.1) and channel dropout (p = 0.1); the result
/// is min-max renormalized and blended 50/50 with the input.
pub struct NetPerturb;

pub struct PerturbNet {
    pub w1: Vec<f64>, // 8x3x3x3
    pub w2: Vec<f64>, // 8x8x3x3
    pub w3: Vec<f64>, // 3x8x3x3
}

#[derive(Clone)]
pub struct PerturbDraw {
    pub scale1: Vec<f64>,
    pub scale2: Vec<f64>,
}

impl PerturbNet {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let mut draw = |n: usize, fan_in: usize| -> Vec<f64> {
            let b = (2.0 / fan_in as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-b..b)).collect()
        };
        Self {
            w1: draw(8 * 3 * 9, 27),
            w2: draw(8 * 8 * 9, 72),
            w3: draw(3 * 8 * 9, 72),
        }
    }

    /// Identity mapping: each layer passes the first channels through its
    /// center tap. Used to pin the neutral-perturbation behavior.
    pub fn identity() -> Self {
        let mut w1 = vec![0.0; 8 * 3 * 9];
        for c in 0..3 {
            w1[(c * 3 + c) * 9 + 4] = 1.0;
        }
        let mut w2 = vec![0.0; 8 * 8 * 9];
        for c in 0..8 {
            w2[(c * 8 + c) * 9 + 4] = 1.0;
        }
        let mut w3 = vec![0.0; 3 * 8 * 9];
        for c in 0..3 {
            w3[(c * 8 + c) * 9 + 4] = 1.0;
        }
        Self { w1, w2, w3 }
    }
}

impl PerturbDraw {
    pub fn neutral() -> Self {
        Self {
            scale1: vec![1.0; 8],
            scale2: vec![1.0; 8],
        }
    }

    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let mut s = rng.gen_range(0.5..2.0);
                    if rng.gen_bool(0.1) {
                        s = -s;
                    }
                    if rng.gen_bool(0.1) {
                        s = 0.0;
                    }
                    s
                })
                .collect()
        };
        Self {
            scale1: draw(8),
            scale2: draw(8),
        }
    }
}

/// Deterministic core of the strategy, exposed so tests can drive it with
/// an identity network and neutral perturbations.
pub fn net_perturb_with(image: &Tensor, net: &PerturbNet, draw: &PerturbDraw, blend: f64) -> Tensor {
    let (h, w) = image_dims(image);
    let mut a1 = vec![0.0; 8 * h * w];
    conv2d_forward(&image.data, 1, 3, h, w, &net.w1, 8, 3, 3, 1, 1, &mut a1);
    for v in a1.iter_mut() {
        *v = v.max(0.0);
    }
    for c in 0..8 {
        let s = draw.scale1[c];
        for v in a1[c * h * w..(c + 1) * h * w].iter_mut() {
            *v *= s;
        }
    }
    let mut a2 = vec![0.0; 8 * h * w];
    conv2d_forward(&a1, 1, 8, h, w, &net.w2, 8, 3, 3, 1, 1, &mut a2);
    for v in a2.iter_mut() {
        *v = v.max(0.0);
    }
    for c in 0..8 {
        let s = draw.scale2[c];
        for v in a2[c * h * w..(c + 1) * h * w].iter_mut() {
            *v *= s;
        }
    }
    let mut decoded = vec![0.0; 3 * h * w];
    conv2d_forward(&a2, 1, 8, h, w, &net.w3, 3, 3, 3, 1, 1, &mut decoded);

    let lo = decoded.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = decoded.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo > 1e-12 {
        let inv = 1.0 / (hi - lo);
        for v in decoded.iter_mut() {
            *v = (*v - lo) * inv;
        }
    } else {
        decoded.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut out = image.clone();
    for (o, d) in out.data.iter_mut().zip(&decoded) {
        *o = (1.0 - blend) * *o + blend * d;
    }
    clamp01(&mut out);
    out
}

impl Augmentor for NetPerturb {
    fn name(&self) -> &'static str {
        "netperturb"
    }
    fn apply(&self, image: &Tensor, mask: &Mask, seed: u64) -> (Tensor, Mask) {
        let mut rng = rng_from(seed_mix(seed, 0xdee9));
        let net = PerturbNet::random(&mut rng);
        let draw = PerturbDraw::random(&mut rng);
        (net_perturb_with(image, &net, &draw, 0.5), mask.clone())
    }
}
