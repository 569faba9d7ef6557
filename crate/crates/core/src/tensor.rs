//! Dense row-major tensor value type shared by the graph, the model
//! parameter store, and the dataset code. Image tensors use N,C,H,W order.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape;
        self
    }
}

/// Integer label plane for a batch of segmentation masks, layout N,H,W.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelBatch {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
}

impl LabelBatch {
    pub fn new(n: usize, height: usize, width: usize, labels: Vec<u32>) -> Self {
        assert_eq!(labels.len(), n * height * width);
        Self {
            n,
            height,
            width,
            labels,
        }
    }
}

/// Right-aligned broadcast of two shapes, numpy rules.
pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let ndim = a.len().max(b.len());
    let mut out = vec![0usize; ndim];
    for i in 0..ndim {
        let da = if i < ndim - a.len() {
            1
        } else {
            a[i - (ndim - a.len())]
        };
        let db = if i < ndim - b.len() {
            1
        } else {
            b[i - (ndim - b.len())]
        };
        if da != db && da != 1 && db != 1 {
            return Err(Error::ShapeMismatch {
                op,
                axis: i,
                left: da,
                right: db,
            });
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

/// Row-major strides, with stride 0 on broadcast (extent-1) axes so a
/// flat walk over the output shape indexes the source correctly.
pub fn broadcast_strides(src: &[usize], out_ndim: usize) -> Vec<usize> {
    let mut strides = vec![0usize; out_ndim];
    let offset = out_ndim - src.len();
    let mut acc = 1usize;
    for i in (0..src.len()).rev() {
        strides[offset + i] = if src[i] == 1 { 0 } else { acc };
        acc *= src[i];
    }
    strides
}

/// Accumulate `grad` (shaped `grad_shape`) into a buffer of `target_shape`,
/// summing over axes that were broadcast.
pub fn reduce_grad_into(
    grad: &[f64],
    grad_shape: &[usize],
    target: &mut [f64],
    target_shape: &[usize],
) {
    if grad_shape == target_shape {
        for (t, g) in target.iter_mut().zip(grad) {
            *t += g;
        }
        return;
    }
    let ndim = grad_shape.len();
    let strides = broadcast_strides(target_shape, ndim);
    let mut coords = vec![0usize; ndim];
    for &g in grad.iter() {
        let mut idx = 0usize;
        for d in 0..ndim {
            idx += coords[d] * strides[d];
        }
        target[idx] += g;
        for d in (0..ndim).rev() {
            coords[d] += 1;
            if coords[d] < grad_shape[d] {
                break;
            }
            coords[d] = 0;
        }
    }
}
