//! ShapesWorld: a procedural five-class segmentation task (background,
//! circle, rectangle, triangle, stripe) on 64x64 RGB images. Scenes are a
//! background gradient plus 2-5 jitter-colored shapes with exact
//! rasterized masks; everything is a pure function of the seed.

use instcal_core::rng::{mix as seed_mix, rng_from};
use instcal_core::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domains::{DomainKind, DomainSpec};
use crate::image::{set_pixel, Mask};

pub const IMAGE_SIZE: usize = 64;
pub const N_CLASSES: usize = 5;

pub const CLASS_NAMES: [&str; N_CLASSES] = ["background", "circle", "rectangle", "triangle", "stripe"];

/// Per-class base colors; shapes get per-instance jitter on top.
#[derive(Debug, Clone, PartialEq)]
pub struct Palette {
    pub colors: [[f64; 3]; N_CLASSES],
    pub jitter: f64,
}

impl Default for Palette {
    fn default() -> Self {
        Self {
            colors: [
                [0.25, 0.3, 0.38],  // background midtone
                [0.85, 0.25, 0.2],  // circle: red
                [0.2, 0.75, 0.3],   // rectangle: green
                [0.9, 0.85, 0.25],  // triangle: yellow
                [0.3, 0.5, 0.9],    // stripe: blue
            ],
            jitter: 0.08,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub mask: Mask,
    pub seed: u64,
    pub domain: DomainSpec,
}

/// Line of a dataset manifest, one JSON object per sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestLine {
    pub seed: u64,
    pub domain: DomainSpec,
}

pub fn generate_scene(seed: u64, n_shapes: (usize, usize), palette: &Palette) -> Sample {
    let size = IMAGE_SIZE;
    let mut rng = rng_from(seed_mix(seed, 0x5ce9e));
    let mut image = Tensor::zeros(vec![3, size, size]);
    let mut mask = Mask::filled(size, size, 0);

    // background: vertical or horizontal gradient between two jittered tones
    let base = palette.colors[0];
    let tone = |rng: &mut _, base: [f64; 3]| -> [f64; 3] {
        let mut t = base;
        for v in t.iter_mut() {
            *v = (*v + rand::Rng::gen_range(rng, -0.12..0.12)).clamp(0.05, 0.6);
        }
        t
    };
    let top = tone(&mut rng, base);
    let bottom = tone(&mut rng, base);
    let horizontal = rng.gen_bool(0.5);
    for y in 0..size {
        for x in 0..size {
            let t = if horizontal {
                x as f64 / (size - 1) as f64
            } else {
                y as f64 / (size - 1) as f64
            };
            for c in 0..3 {
                set_pixel(&mut image, c, y, x, top[c] * (1.0 - t) + bottom[c] * t);
            }
        }
    }

    let count = if n_shapes.1 == 0 {
        0
    } else {
        rng.gen_range(n_shapes.0..=n_shapes.1)
    };
    for _ in 0..count {
        let class = rng.gen_range(1..N_CLASSES as u32);
        let mut color = palette.colors[class as usize];
        for v in color.iter_mut() {
            *v = (*v + rng.gen_range(-palette.jitter..palette.jitter)).clamp(0.0, 1.0);
        }
        match class {
            1 => {
                let cy = rng.gen_range(10..(size - 10)) as f64;
                let cx = rng.gen_range(10..(size - 10)) as f64;
                let r = rng.gen_range(6.0..15.0);
                paint(&mut image, &mut mask, class, color, |y, x| {
                    let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                    dy * dy + dx * dx <= r * r
                });
            }
            2 => {
                let y0 = rng.gen_range(2..size - 10);
                let x0 = rng.gen_range(2..size - 10);
                let hh = rng.gen_range(8..26).min(size - y0);
                let ww = rng.gen_range(8..26).min(size - x0);
                paint(&mut image, &mut mask, class, color, |y, x| {
                    y >= y0 && y < y0 + hh && x >= x0 && x < x0 + ww
                });
            }
            3 => {
                let cy = rng.gen_range(12..(size - 12)) as f64;
                let cx = rng.gen_range(12..(size - 12)) as f64;
                let base_angle = rng.gen_range(0.0..std::f64::consts::TAU);
                let mut pts = [[0.0f64; 2]; 3];
                for (i, p) in pts.iter_mut().enumerate() {
                    let ang = base_angle
                        + i as f64 * std::f64::consts::TAU / 3.0
                        + rng.gen_range(-0.5..0.5);
                    let rad = rng.gen_range(7.0..15.0);
                    *p = [cy + rad * ang.sin(), cx + rad * ang.cos()];
                }
                paint(&mut image, &mut mask, class, color, |y, x| {
                    in_triangle(y as f64, x as f64, &pts)
                });
            }
            _ => {
                let ang = rng.gen_range(0.0..std::f64::consts::PI);
                let (nx, ny) = (ang.cos(), ang.sin());
                let offset = rng.gen_range(0.2..0.8) * size as f64;
                let half = rng.gen_range(2.0..5.0);
                paint(&mut image, &mut mask, class, color, |y, x| {
                    let d = nx * x as f64 + ny * y as f64 - offset;
                    d.abs() <= half
                });
            }
        }
    }

    Sample {
        image,
        mask,
        seed,
        domain: DomainSpec::new(DomainKind::Identity, seed),
    }
}

fn paint(
    image: &mut Tensor,
    mask: &mut Mask,
    class: u32,
    color: [f64; 3],
    inside: impl Fn(usize, usize) -> bool,
) {
    let size = mask.height;
    for y in 0..size {
        for x in 0..size {
            if inside(y, x) {
                mask.set(y, x, class);
                for c in 0..3 {
                    set_pixel(image, c, y, x, color[c]);
                }
            }
        }
    }
}

fn in_triangle(py: f64, px: f64, pts: &[[f64; 2]; 3]) -> bool {
    let sign = |a: &[f64; 2], b: &[f64; 2], y: f64, x: f64| {
        (x - b[1]) * (a[0] - b[0]) - (a[1] - b[1]) * (y - b[0])
    };
    let d1 = sign(&pts[0], &pts[1], py, px);
    let d2 = sign(&pts[1], &pts[2], py, px);
    let d3 = sign(&pts[2], &pts[0], py, px);
    let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(has_neg && has_pos)
}
