//! The nine color-only augmentation operations used by the random-color
//! strategy and the augmentation-mixing chains: Identity, AutoContrast,
//! Invert, Equalize, Solarize, Posterize, Color, Brightness, Sharpness.
//! All operate on RGB [0,1] images and never touch the mask. Magnitude
//! ranges are listed in `docs/domains.md`.

use instcal_core::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::image::{channel_mut, clamp01, image_dims, luma};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ColorOp {
    Identity,
    AutoContrast,
    Invert,
    Equalize,
    Solarize { threshold: f64 },
    Posterize { bits: u8 },
    Color { factor: f64 },
    Brightness { factor: f64 },
    Sharpness { factor: f64 },
}

pub const COLOR_OP_COUNT: usize = 9;

/// Draw op `index` (0..9) with a random magnitude from its documented range.
pub fn sample_op(index: usize, rng: &mut ChaCha8Rng) -> ColorOp {
    match index {
        0 => ColorOp::Identity,
        1 => ColorOp::AutoContrast,
        2 => ColorOp::Invert,
        3 => ColorOp::Equalize,
        4 => ColorOp::Solarize {
            threshold: rng.gen_range(0.3..1.0),
        },
        5 => ColorOp::Posterize {
            bits: rng.gen_range(4..=8),
        },
        6 => ColorOp::Color {
            factor: rng.gen_range(0.2..1.8),
        },
        7 => ColorOp::Brightness {
            factor: rng.gen_range(0.4..1.6),
        },
        8 => ColorOp::Sharpness {
            factor: rng.gen_range(0.2..1.8),
        },
        _ => unreachable!("color op index out of range"),
    }
}

pub fn apply(op: ColorOp, image: &Tensor) -> Tensor {
    let mut out = image.clone();
    match op {
        ColorOp::Identity => {}
        ColorOp::AutoContrast => {
            for c in 0..3 {
                let plane = channel_mut(&mut out, c);
                let lo = plane.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = plane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if hi - lo > 1e-12 {
                    let scale = 1.0 / (hi - lo);
                    for v in plane.iter_mut() {
                        *v = (*v - lo) * scale;
                    }
                }
            }
        }
        ColorOp::Invert => {
            for v in out.data.iter_mut() {
                *v = 1.0 - *v;
            }
        }
        ColorOp::Equalize => {
            for c in 0..3 {
                equalize_channel(channel_mut(&mut out, c));
            }
        }
        ColorOp::Solarize { threshold } => {
            for v in out.data.iter_mut() {
                if *v >= threshold {
                    *v = 1.0 - *v;
                }
            }
        }
        ColorOp::Posterize { bits } => {
            let keep = 0xffu8 << (8 - bits.min(8));
            for v in out.data.iter_mut() {
                let q = ((*v * 255.0 + 0.5).floor() as i32).clamp(0, 255) as u8;
                *v = (q & keep) as f64 / 255.0;
            }
        }
        ColorOp::Color { factor } => {
            let (h, w) = image_dims(image);
            let plane = h * w;
            for p in 0..plane {
                let (r, g, b) = (out.data[p], out.data[plane + p], out.data[2 * plane + p]);
                let gray = luma(r, g, b);
                out.data[p] = gray + factor * (r - gray);
                out.data[plane + p] = gray + factor * (g - gray);
                out.data[2 * plane + p] = gray + factor * (b - gray);
            }
        }
        ColorOp::Brightness { factor } => {
            for v in out.data.iter_mut() {
                *v *= factor;
            }
        }
        ColorOp::Sharpness { factor } => {
            let blurred = smooth3(&out);
            for (v, b) in out.data.iter_mut().zip(&blurred.data) {
                *v = b + factor * (*v - b);
            }
        }
    }
    clamp01(&mut out);
    out
}

/// 3x3 smoothing with the center-weighted kernel (1,1,1;1,5,1;1,1,1)/13,
/// edge pixels kept as-is.
fn smooth3(image: &Tensor) -> Tensor {
    let (h, w) = image_dims(image);
    let mut out = image.clone();
    for c in 0..3 {
        let src: Vec<f64> = crate::image::channel(image, c).to_vec();
        let dst = channel_mut(&mut out, c);
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let mut acc = 4.0 * src[y * w + x];
                for dy in -1i32..=1 {
                    for dx in -1i32..=1 {
                        acc += src[((y as i32 + dy) as usize) * w + (x as i32 + dx) as usize];
                    }
                }
                dst[y * w + x] = acc / 13.0;
            }
        }
    }
    out
}

fn equalize_channel(plane: &mut [f64]) {
    let mut hist = [0u32; 256];
    for v in plane.iter() {
        let q = ((*v * 255.0 + 0.5).floor() as i32).clamp(0, 255) as usize;
        hist[q] += 1;
    }
    let mut cdf = [0u32; 256];
    let mut acc = 0;
    for i in 0..256 {
        acc += hist[i];
        cdf[i] = acc;
    }
    let cdf_min = cdf.iter().cloned().find(|&v| v > 0).unwrap_or(0);
    let total = plane.len() as u32;
    if total == cdf_min {
        return; // constant channel
    }
    let denom = (total - cdf_min) as f64;
    let mut lut = [0f64; 256];
    for i in 0..256 {
        let num = cdf[i].saturating_sub(cdf_min) as f64;
        lut[i] = (num * 255.0 / denom).round().clamp(0.0, 255.0) / 255.0;
    }
    for v in plane.iter_mut() {
        let q = ((*v * 255.0 + 0.5).floor() as i32).clamp(0, 255) as usize;
        *v = lut[q];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(data: Vec<f64>) -> Tensor {
        let n = data.len() / 3;
        let w = n; // 1-row image
        Tensor::new(vec![3, 1, w], data)
    }

    #[test]
    fn identity_is_noop() {
        let i = img(vec![0.1, 0.5, 0.9, 0.2, 0.4, 0.6]);
        assert_eq!(apply(ColorOp::Identity, &i), i);
    }

    #[test]
    fn invert_definition() {
        let i = img(vec![0.25, 1.0, 0.0, 0.5, 0.75, 0.3]);
        let o = apply(ColorOp::Invert, &i);
        for (a, b) in o.data.iter().zip(&i.data) {
            assert!((a - (1.0 - b)).abs() < 1e-15);
        }
    }

    #[test]
    fn solarize_inverts_at_and_above_threshold() {
        // [0.2, 0.8] at threshold 0.5 -> [0.2, 0.2]
        let i = img(vec![0.2, 0.8, 0.2, 0.8, 0.2, 0.8]);
        let o = apply(ColorOp::Solarize { threshold: 0.5 }, &i);
        for pair in o.data.chunks(2) {
            assert!((pair[0] - 0.2).abs() < 1e-12);
            assert!((pair[1] - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn autocontrast_stretches_to_full_range() {
        let i = img(vec![0.4, 0.6, 0.5, 0.3, 0.7, 0.5]);
        let o = apply(ColorOp::AutoContrast, &i);
        // channel 0: [0.4,0.6] -> [0,1]
        assert!((o.data[0] - 0.0).abs() < 1e-12);
        assert!((o.data[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn brightness_scales_and_clamps() {
        let i = img(vec![0.5, 0.9, 0.5, 0.9, 0.5, 0.9]);
        let o = apply(ColorOp::Brightness { factor: 1.5 }, &i);
        assert!((o.data[0] - 0.75).abs() < 1e-12);
        assert!((o.data[1] - 1.0).abs() < 1e-12); // clamped
    }

    #[test]
    fn posterize_keeps_top_bits() {
        let i = img(vec![0.5, 0.123, 0.9, 0.0, 1.0, 0.3]);
        let o = apply(ColorOp::Posterize { bits: 4 }, &i);
        for v in &o.data {
            let q = (v * 255.0).round() as u8;
            assert_eq!(q & 0x0f, 0, "low bits survive: {v}");
        }
    }

    #[test]
    fn all_ops_stay_in_range() {
        let mut rng = instcal_core::rng::rng_from(5);
        let data: Vec<f64> = (0..3 * 8 * 8).map(|_| rng.gen_range(0.0..1.0)).collect();
        let i = Tensor::new(vec![3, 8, 8], data);
        for idx in 0..COLOR_OP_COUNT {
            for _ in 0..5 {
                let op = sample_op(idx, &mut rng);
                let o = apply(op, &i);
                assert!(
                    o.data.iter().all(|v| (0.0..=1.0).contains(v)),
                    "op {op:?} left range"
                );
            }
        }
    }
}
