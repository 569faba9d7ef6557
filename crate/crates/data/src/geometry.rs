//! Label-preserving geometric transforms applied jointly to image and mask.
//! Masks always resample nearest-neighbor so labels stay exact; images use
//! bilinear where smoothness matters (scaling) and nearest elsewhere.

use instcal_core::Tensor;

use crate::image::{image_dims, Mask, IGNORE_LABEL};

pub fn hflip(image: &Tensor, mask: &Mask) -> (Tensor, Mask) {
    let (h, w) = image_dims(image);
    let mut img = image.clone();
    for c in 0..3 {
        for y in 0..h {
            let row = &mut crate::image::channel_mut(&mut img, c)[y * w..(y + 1) * w];
            row.reverse();
        }
    }
    let mut m = mask.clone();
    for y in 0..h {
        m.data[y * w..(y + 1) * w].reverse();
    }
    (img, m)
}

/// Integer translation; vacated pixels get 0 in the image and the ignore
/// label in the mask.
pub fn translate(image: &Tensor, mask: &Mask, dy: i32, dx: i32) -> (Tensor, Mask) {
    let (h, w) = image_dims(image);
    let mut img = Tensor::zeros(image.shape.clone());
    let mut m = Mask::filled(h, w, IGNORE_LABEL);
    for y in 0..h as i32 {
        for x in 0..w as i32 {
            let (sy, sx) = (y - dy, x - dx);
            if sy >= 0 && sy < h as i32 && sx >= 0 && sx < w as i32 {
                for c in 0..3 {
                    let v = crate::image::pixel(image, c, sy as usize, sx as usize);
                    crate::image::set_pixel(&mut img, c, y as usize, x as usize, v);
                }
                m.set(y as usize, x as usize, mask.get(sy as usize, sx as usize));
            }
        }
    }
    (img, m)
}

/// Rotation about the image center, nearest-neighbor for both image and
/// mask; out-of-frame pixels get 0 / ignore.
pub fn rotate(image: &Tensor, mask: &Mask, degrees: f64) -> (Tensor, Mask) {
    let (h, w) = image_dims(image);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = degrees.to_radians().sin_cos();
    let mut img = Tensor::zeros(image.shape.clone());
    let mut m = Mask::filled(h, w, IGNORE_LABEL);
    for y in 0..h {
        for x in 0..w {
            // inverse map: rotate destination back into the source
            let (ry, rx) = (y as f64 - cy, x as f64 - cx);
            let sy = (cos * ry + sin * rx + cy).round();
            let sx = (-sin * ry + cos * rx + cx).round();
            if sy >= 0.0 && sy < h as f64 && sx >= 0.0 && sx < w as f64 {
                let (sy, sx) = (sy as usize, sx as usize);
                for c in 0..3 {
                    let v = crate::image::pixel(image, c, sy, sx);
                    crate::image::set_pixel(&mut img, c, y, x, v);
                }
                m.set(y, x, mask.get(sy, sx));
            }
        }
    }
    (img, m)
}

/// Zoom in by `scale` >= 1 and crop back to the original size with the
/// given window offset (fractions in [0,1]). Bilinear image, NN mask.
pub fn zoom_crop(image: &Tensor, mask: &Mask, scale: f64, fy: f64, fx: f64) -> (Tensor, Mask) {
    assert!(scale >= 1.0, "zoom_crop only zooms in");
    let (h, w) = image_dims(image);
    let (zh, zw) = ((h as f64 * scale) as usize, (w as f64 * scale) as usize);
    let oy = ((zh - h) as f64 * fy) as usize;
    let ox = ((zw - w) as f64 * fx) as usize;
    let mut img = Tensor::zeros(image.shape.clone());
    let mut m = Mask::filled(h, w, 0);
    for y in 0..h {
        for x in 0..w {
            // position in the zoomed plane, mapped back to source coords
            let sy = (y + oy) as f64 / scale;
            let sx = (x + ox) as f64 / scale;
            let y0 = sy.floor().min(h as f64 - 1.0) as usize;
            let x0 = sx.floor().min(w as f64 - 1.0) as usize;
            let y1 = (y0 + 1).min(h - 1);
            let x1 = (x0 + 1).min(w - 1);
            let (ty, tx) = (sy - y0 as f64, sx - x0 as f64);
            for c in 0..3 {
                let v00 = crate::image::pixel(image, c, y0, x0);
                let v01 = crate::image::pixel(image, c, y0, x1);
                let v10 = crate::image::pixel(image, c, y1, x0);
                let v11 = crate::image::pixel(image, c, y1, x1);
                let v = v00 * (1.0 - ty) * (1.0 - tx)
                    + v01 * (1.0 - ty) * tx
                    + v10 * ty * (1.0 - tx)
                    + v11 * ty * tx;
                crate::image::set_pixel(&mut img, c, y, x, v);
            }
            let ny = sy.round().min(h as f64 - 1.0) as usize;
            let nx = sx.round().min(w as f64 - 1.0) as usize;
            m.set(y, x, mask.get(ny, nx));
        }
    }
    (img, m)
}
