//! Binary PPM (P6) output for images, color-mapped masks, and the
//! input / ground-truth / prediction triptychs.

use std::io::Write;
use std::path::Path;

use instcal_core::Tensor;

use crate::error::Result;
use crate::image::{image_dims, pixel, Mask};
use crate::scenes::{Palette, N_CLASSES};

pub fn image_to_rgb8(image: &Tensor) -> (usize, usize, Vec<u8>) {
    let (h, w) = image_dims(image);
    let mut bytes = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = pixel(image, c, y, x).clamp(0.0, 1.0);
                bytes.push((v * 255.0 + 0.5) as u8);
            }
        }
    }
    (h, w, bytes)
}

pub fn mask_to_rgb8(mask: &Mask, palette: &Palette) -> (usize, usize, Vec<u8>) {
    let mut bytes = Vec::with_capacity(mask.height * mask.width * 3);
    for &v in &mask.data {
        let color = if (v as usize) < N_CLASSES {
            palette.colors[v as usize]
        } else {
            [0.0, 0.0, 0.0] // ignore label
        };
        for c in color {
            bytes.push((c * 255.0 + 0.5) as u8);
        }
    }
    (mask.height, mask.width, bytes)
}

pub fn write_ppm(path: &Path, height: usize, width: usize, rgb: &[u8]) -> Result<()> {
    write_ppm_tagged(path, height, width, rgb, None)
}

/// P6 image, optionally carrying a provenance tag as a header comment.
pub fn write_ppm_tagged(
    path: &Path,
    height: usize,
    width: usize,
    rgb: &[u8],
    tag: Option<&str>,
) -> Result<()> {
    assert_eq!(rgb.len(), height * width * 3);
    let mut f = std::fs::File::create(path)?;
    match tag {
        Some(t) => write!(f, "P6\n# {t}\n{width} {height}\n255\n")?,
        None => write!(f, "P6\n{width} {height}\n255\n")?,
    }
    f.write_all(rgb)?;
    Ok(())
}

/// Side-by-side panels with a 2px white separator.
pub fn write_triptych(
    path: &Path,
    panels: &[(usize, usize, Vec<u8>)],
) -> Result<()> {
    write_triptych_tagged(path, panels, None)
}

/// Side-by-side panels with a provenance tag comment.
pub fn write_triptych_tagged(
    path: &Path,
    panels: &[(usize, usize, Vec<u8>)],
    tag: Option<&str>,
) -> Result<()> {
    assert!(!panels.is_empty());
    let h = panels[0].0;
    let sep = 2usize;
    let total_w: usize = panels.iter().map(|p| p.1).sum::<usize>() + sep * (panels.len() - 1);
    let mut rgb = vec![255u8; h * total_w * 3];
    let mut x_off = 0usize;
    for (ph, pw, bytes) in panels {
        assert_eq!(*ph, h, "panel heights must match");
        for y in 0..h {
            let dst = (y * total_w + x_off) * 3;
            let src = y * pw * 3;
            rgb[dst..dst + pw * 3].copy_from_slice(&bytes[src..src + pw * 3]);
        }
        x_off += pw + sep;
    }
    write_ppm_tagged(path, h, total_w, &rgb, tag)
}
