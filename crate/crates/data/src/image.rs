//! RGB image helpers over the shared tensor type (layout 3,H,W in [0,1])
//! and the per-image integer label mask.

use instcal_core::Tensor;

pub const IGNORE_LABEL: u32 = 255;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u32>,
}

impl Mask {
    pub fn filled(height: usize, width: usize, value: u32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u32) {
        self.data[y * self.width + x] = v;
    }
}

pub fn image_dims(image: &Tensor) -> (usize, usize) {
    assert_eq!(image.shape.len(), 3, "expected C,H,W image");
    assert_eq!(image.shape[0], 3, "expected RGB image");
    (image.shape[1], image.shape[2])
}

#[inline]
pub fn pixel(image: &Tensor, c: usize, y: usize, x: usize) -> f64 {
    let (h, w) = (image.shape[1], image.shape[2]);
    debug_assert!(y < h && x < w);
    image.data[(c * h + y) * w + x]
}

#[inline]
pub fn set_pixel(image: &mut Tensor, c: usize, y: usize, x: usize, v: f64) {
    let (h, w) = (image.shape[1], image.shape[2]);
    image.data[(c * h + y) * w + x] = v;
}

pub fn clamp01(image: &mut Tensor) {
    for v in image.data.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Per-channel plane of length H*W.
pub fn channel(image: &Tensor, c: usize) -> &[f64] {
    let plane = image.shape[1] * image.shape[2];
    &image.data[c * plane..(c + 1) * plane]
}

pub fn channel_mut(image: &mut Tensor, c: usize) -> &mut [f64] {
    let plane = image.shape[1] * image.shape[2];
    &mut image.data[c * plane..(c + 1) * plane]
}

/// Stack images (C,H,W each) into a batch tensor (N,C,H,W).
pub fn batch_of(images: &[&Tensor]) -> Tensor {
    assert!(!images.is_empty());
    let shape = images[0].shape.clone();
    let mut data = Vec::with_capacity(images.len() * images[0].numel());
    for img in images {
        assert_eq!(img.shape, shape);
        data.extend_from_slice(&img.data);
    }
    let mut s = vec![images.len()];
    s.extend(shape);
    Tensor::new(s, data)
}

/// Luma used by the saturation-style color op.
#[inline]
pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}
