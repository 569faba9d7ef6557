//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its output
//! value and enough metadata to replay the backward pass in exact reverse
//! execution order. Graphs are built fresh per forward pass and consumed by
//! a single `backward` call; calling `backward` twice is an error.
//!
//! Tensors that never lead back to a `requires_grad` leaf are skipped during
//! backward, so frozen-backbone training only pays for the gradient paths it
//! actually uses.

use crate::conv;
use crate::error::{Error, Result};
use crate::tensor::{broadcast_shape, broadcast_strides, reduce_grad_into, LabelBatch, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Div(TensorId, TensorId),
    AddScalar(TensorId),
    MulScalar(TensorId, f64),
    ClampMin(TensorId, f64),
    Relu(TensorId),
    Exp(TensorId),
    Sqrt(TensorId),
    Matmul(TensorId, TensorId),
    Concat(Vec<TensorId>, usize),
    Reshape(TensorId),
    BroadcastTo(TensorId),
    ReduceSum(TensorId),
    ReduceMean(TensorId, Vec<usize>),
    Softmax(TensorId, usize),
    LogSoftmax(TensorId, usize),
    Conv2d {
        input: TensorId,
        weight: TensorId,
        stride: usize,
        padding: usize,
    },
    Upsample2(TensorId),
    NllSeg {
        log_probs: TensorId,
        labels: LabelBatch,
        ignore: u32,
        n_valid: usize,
    },
}

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn numel(&self, id: TensorId) -> usize {
        self.nodes[id.0].data.len()
    }

    /// Scalar value of a one-element tensor.
    pub fn value(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.numel(id), 1);
        self.nodes[id.0].data[0]
    }

    pub fn to_tensor(&self, id: TensorId) -> Tensor {
        Tensor::new(self.shape(id).to_vec(), self.data(id).to_vec())
    }

    /// Gradient of a leaf after `backward`; `None` if no gradient reached it.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn finite_check(&self, id: TensorId, context: &str) -> Result<()> {
        if self.nodes[id.0].data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.to_string(),
            })
        }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, needs_grad: bool) -> TensorId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            data,
            shape,
            op,
            needs_grad,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs_grad
    }

    // ── leaves ───────────────────────────────────────────────────────

    pub fn leaf(&mut self, t: &Tensor, requires_grad: bool) -> TensorId {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf, requires_grad)
    }

    pub fn leaf_owned(&mut self, t: Tensor, requires_grad: bool) -> TensorId {
        self.push(t.shape, t.data, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, t: &Tensor) -> TensorId {
        self.leaf(t, false)
    }

    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.push(vec![], vec![v], Op::Leaf, false)
    }

    // ── elementwise binary (broadcasting) ────────────────────────────

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("add", a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("sub", a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("mul", a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("div", a, b, |x, y| x / y)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<TensorId> {
        let out_shape = broadcast_shape(name, self.shape(a), self.shape(b))?;
        let numel: usize = out_shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        if self.shape(a) == out_shape.as_slice() && self.shape(b) == out_shape.as_slice() {
            let (da, db) = (self.data(a), self.data(b));
            data.extend(da.iter().zip(db).map(|(x, y)| f(*x, *y)));
        } else {
            let sa = broadcast_strides(self.shape(a), out_shape.len());
            let sb = broadcast_strides(self.shape(b), out_shape.len());
            let (da, db) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
            let mut walker = BroadcastWalker::new(&out_shape, &sa, &sb);
            for _ in 0..numel {
                let (ia, ib) = walker.indices();
                data.push(f(da[ia], db[ib]));
                walker.step();
            }
        }
        let needs = self.needs(a) || self.needs(b);
        let op = match name {
            "add" => Op::Add(a, b),
            "sub" => Op::Sub(a, b),
            "mul" => Op::Mul(a, b),
            _ => Op::Div(a, b),
        };
        Ok(self.push(out_shape, data, op, needs))
    }

    // ── elementwise unary ────────────────────────────────────────────

    pub fn add_scalar(&mut self, a: TensorId, c: f64) -> TensorId {
        let data = self.data(a).iter().map(|x| x + c).collect();
        let needs = self.needs(a);
        self.push(self.shape(a).to_vec(), data, Op::AddScalar(a), needs)
    }

    pub fn mul_scalar(&mut self, a: TensorId, c: f64) -> TensorId {
        let data = self.data(a).iter().map(|x| x * c).collect();
        let needs = self.needs(a);
        self.push(self.shape(a).to_vec(), data, Op::MulScalar(a, c), needs)
    }

    pub fn clamp_min(&mut self, a: TensorId, floor: f64) -> TensorId {
        let data = self.data(a).iter().map(|x| x.max(floor)).collect();
        let needs = self.needs(a);
        self.push(self.shape(a).to_vec(), data, Op::ClampMin(a, floor), needs)
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let data = self.data(a).iter().map(|x| x.max(0.0)).collect();
        let needs = self.needs(a);
        self.push(self.shape(a).to_vec(), data, Op::Relu(a), needs)
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        let data = self.data(a).iter().map(|x| x.exp()).collect();
        let needs = self.needs(a);
        self.push(self.shape(a).to_vec(), data, Op::Exp(a), needs)
    }

    pub fn sqrt(&mut self, a: TensorId) -> TensorId {
        let data = self.data(a).iter().map(|x| x.sqrt()).collect();
        let needs = self.needs(a);
        self.push(self.shape(a).to_vec(), data, Op::Sqrt(a), needs)
    }

    // ── shape ops ────────────────────────────────────────────────────

    pub fn reshape(&mut self, a: TensorId, shape: Vec<usize>) -> TensorId {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.numel(a),
            "reshape: element count mismatch {:?} -> {:?}",
            self.shape(a),
            shape
        );
        let data = self.data(a).to_vec();
        let needs = self.needs(a);
        self.push(shape, data, Op::Reshape(a), needs)
    }

    pub fn broadcast_to(&mut self, a: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let merged = broadcast_shape("broadcast_to", self.shape(a), &shape)?;
        if merged != shape {
            return Err(Error::Dimension {
                op: "broadcast_to",
                msg: format!("cannot broadcast {:?} to {:?}", self.shape(a), shape),
            });
        }
        let numel: usize = shape.iter().product();
        let strides = broadcast_strides(self.shape(a), shape.len());
        let src = &self.nodes[a.0].data;
        let mut data = Vec::with_capacity(numel);
        let mut walker = BroadcastWalker::new(&shape, &strides, &strides);
        for _ in 0..numel {
            data.push(src[walker.indices().0]);
            walker.step();
        }
        let needs = self.needs(a);
        Ok(self.push(shape, data, Op::BroadcastTo(a), needs))
    }

    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> Result<TensorId> {
        assert!(!parts.is_empty());
        let ndim = self.shape(parts[0]).len();
        if axis >= ndim {
            return Err(Error::Dimension {
                op: "concat",
                msg: format!("axis {axis} out of range for ndim {ndim}"),
            });
        }
        let mut out_shape = self.shape(parts[0]).to_vec();
        let mut axis_total = 0usize;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != ndim {
                return Err(Error::Dimension {
                    op: "concat",
                    msg: "rank mismatch".into(),
                });
            }
            for d in 0..ndim {
                if d != axis && s[d] != out_shape[d] {
                    return Err(Error::ShapeMismatch {
                        op: "concat",
                        axis: d,
                        left: out_shape[d],
                        right: s[d],
                    });
                }
            }
            axis_total += s[axis];
        }
        out_shape[axis] = axis_total;
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let mut data = vec![0.0; out_shape.iter().product()];
        let mut offset = 0usize;
        for &p in parts {
            let ext = self.shape(p)[axis];
            let src = &self.nodes[p.0].data;
            for o in 0..outer {
                let dst_base = (o * axis_total + offset) * inner;
                let src_base = o * ext * inner;
                data[dst_base..dst_base + ext * inner]
                    .copy_from_slice(&src[src_base..src_base + ext * inner]);
            }
            offset += ext;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out_shape, data, Op::Concat(parts.to_vec(), axis), needs))
    }

    // ── reductions ───────────────────────────────────────────────────

    /// Sum over `axes`, keeping reduced axes as extent 1.
    pub fn reduce_sum(&mut self, a: TensorId, axes: &[usize]) -> Result<TensorId> {
        self.reduce(a, axes, false)
    }

    /// Mean over `axes`, keeping reduced axes as extent 1.
    pub fn reduce_mean(&mut self, a: TensorId, axes: &[usize]) -> Result<TensorId> {
        self.reduce(a, axes, true)
    }

    fn reduce(&mut self, a: TensorId, axes: &[usize], mean: bool) -> Result<TensorId> {
        let in_shape = self.shape(a).to_vec();
        let mut out_shape = in_shape.clone();
        let mut count = 1usize;
        for &ax in axes {
            if ax >= in_shape.len() {
                return Err(Error::Dimension {
                    op: "reduce",
                    msg: format!("axis {ax} out of range for shape {in_shape:?}"),
                });
            }
            if in_shape[ax] == 0 {
                return Err(Error::EmptyReduction { axis: ax });
            }
            count *= in_shape[ax];
            out_shape[ax] = 1;
        }
        let mut out = vec![0.0; out_shape.iter().product()];
        let strides = broadcast_strides(&out_shape, in_shape.len());
        let src = &self.nodes[a.0].data;
        let mut walker = BroadcastWalker::new(&in_shape, &strides, &strides);
        for &v in src.iter() {
            out[walker.indices().0] += v;
            walker.step();
        }
        if mean {
            let inv = 1.0 / count as f64;
            for v in out.iter_mut() {
                *v *= inv;
            }
        }
        let needs = self.needs(a);
        let op = if mean {
            Op::ReduceMean(a, axes.to_vec())
        } else {
            Op::ReduceSum(a)
        };
        Ok(self.push(out_shape, out, op, needs))
    }

    /// Mean and biased variance over `axes` (kept as extent-1 axes), both
    /// differentiable. Variance is computed as mean of squared deviations.
    pub fn reduce_stats(&mut self, a: TensorId, axes: &[usize]) -> Result<(TensorId, TensorId)> {
        let mean = self.reduce_mean(a, axes)?;
        let centered = self.sub(a, mean)?;
        let sq = self.mul(centered, centered)?;
        let var = self.reduce_mean(sq, axes)?;
        Ok((mean, var))
    }

    // ── softmax family ───────────────────────────────────────────────

    pub fn softmax(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        let (outer, ext, inner) = self.row_split(a, axis)?;
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * ext * inner + i;
                let mut max = f64::NEG_INFINITY;
                for k in 0..ext {
                    max = max.max(src[base + k * inner]);
                }
                let mut sum = 0.0;
                for k in 0..ext {
                    let e = (src[base + k * inner] - max).exp();
                    data[base + k * inner] = e;
                    sum += e;
                }
                let inv = 1.0 / sum;
                for k in 0..ext {
                    data[base + k * inner] *= inv;
                }
            }
        }
        let needs = self.needs(a);
        Ok(self.push(self.shape(a).to_vec(), data, Op::Softmax(a, axis), needs))
    }

    pub fn log_softmax(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        let (outer, ext, inner) = self.row_split(a, axis)?;
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * ext * inner + i;
                let mut max = f64::NEG_INFINITY;
                for k in 0..ext {
                    max = max.max(src[base + k * inner]);
                }
                let mut sum = 0.0;
                for k in 0..ext {
                    sum += (src[base + k * inner] - max).exp();
                }
                let log_z = max + sum.ln();
                for k in 0..ext {
                    data[base + k * inner] = src[base + k * inner] - log_z;
                }
            }
        }
        let needs = self.needs(a);
        Ok(self.push(self.shape(a).to_vec(), data, Op::LogSoftmax(a, axis), needs))
    }

    fn row_split(&self, a: TensorId, axis: usize) -> Result<(usize, usize, usize)> {
        let shape = self.shape(a);
        if axis >= shape.len() {
            return Err(Error::Dimension {
                op: "softmax",
                msg: format!("axis {axis} out of range for shape {shape:?}"),
            });
        }
        let outer = shape[..axis].iter().product();
        let inner = shape[axis + 1..].iter().product();
        Ok((outer, shape[axis], inner))
    }

    // ── matmul ───────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::Dimension {
                op: "matmul",
                msg: format!("expects 2-d operands, got {sa:?} and {sb:?}"),
            });
        }
        if sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                axis: 1,
                left: sa[1],
                right: sb[0],
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut data = vec![0.0; m * n];
        let (da, db) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
        for i in 0..m {
            for p in 0..k {
                let av = da[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &db[p * n..(p + 1) * n];
                let crow = &mut data[i * n..(i + 1) * n];
                for (c, bv) in crow.iter_mut().zip(brow) {
                    *c += av * bv;
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], data, Op::Matmul(a, b), needs))
    }

    // ── image ops ────────────────────────────────────────────────────

    /// Cross-correlation with zero padding; `input` N,C,H,W and `weight`
    /// OutC,InC,kH,kW. Bias is applied separately by the caller.
    pub fn conv2d(
        &mut self,
        input: TensorId,
        weight: TensorId,
        stride: usize,
        padding: usize,
    ) -> Result<TensorId> {
        assert!(stride >= 1, "conv2d: stride must be >= 1");
        let si = self.shape(input).to_vec();
        let sw = self.shape(weight).to_vec();
        if si.len() != 4 || sw.len() != 4 {
            return Err(Error::Dimension {
                op: "conv2d",
                msg: format!("expects 4-d input/weight, got {si:?} and {sw:?}"),
            });
        }
        if si[1] != sw[1] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                axis: 1,
                left: si[1],
                right: sw[1],
            });
        }
        if si[2] + 2 * padding < sw[2] || si[3] + 2 * padding < sw[3] {
            return Err(Error::Dimension {
                op: "conv2d",
                msg: format!("kernel {sw:?} larger than padded input {si:?}"),
            });
        }
        let (n, c, h, w) = (si[0], si[1], si[2], si[3]);
        let (oc, kh, kw) = (sw[0], sw[2], sw[3]);
        let oh = conv::conv_out_extent(h, kh, stride, padding);
        let ow = conv::conv_out_extent(w, kw, stride, padding);
        let mut data = vec![0.0; n * oc * oh * ow];
        conv::conv2d_forward(
            &self.nodes[input.0].data,
            n,
            c,
            h,
            w,
            &self.nodes[weight.0].data,
            oc,
            kh,
            kw,
            stride,
            padding,
            &mut data,
        );
        let needs = self.needs(input) || self.needs(weight);
        Ok(self.push(
            vec![n, oc, oh, ow],
            data,
            Op::Conv2d {
                input,
                weight,
                stride,
                padding,
            },
            needs,
        ))
    }

    /// Nearest-neighbor 2x spatial upsample of an N,C,H,W tensor.
    pub fn upsample2(&mut self, a: TensorId) -> TensorId {
        let s = self.shape(a).to_vec();
        assert_eq!(s.len(), 4, "upsample2 expects N,C,H,W");
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let mut data = vec![0.0; n * c * 4 * h * w];
        conv::upsample2_forward(&self.nodes[a.0].data, n, c, h, w, &mut data);
        let needs = self.needs(a);
        self.push(vec![n, c, 2 * h, 2 * w], data, Op::Upsample2(a), needs)
    }

    /// Mean negative log-likelihood over non-ignored pixels of a
    /// log-probability tensor (N,Cl,H,W) against integer labels (N,H,W).
    pub fn nll_seg(&mut self, log_probs: TensorId, labels: &LabelBatch, ignore: u32) -> Result<TensorId> {
        let s = self.shape(log_probs).to_vec();
        assert_eq!(s.len(), 4, "nll_seg expects N,Cl,H,W log-probs");
        let (n, cl, h, w) = (s[0], s[1], s[2], s[3]);
        if labels.n != n || labels.height != h || labels.width != w {
            return Err(Error::Dimension {
                op: "nll_seg",
                msg: format!(
                    "labels {}x{}x{} do not match log-probs {n}x{h}x{w}",
                    labels.n, labels.height, labels.width
                ),
            });
        }
        let lp = &self.nodes[log_probs.0].data;
        let mut total = 0.0;
        let mut n_valid = 0usize;
        for b in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let lab = labels.labels[(b * h + y) * w + x];
                    if lab == ignore {
                        continue;
                    }
                    if lab as usize >= cl {
                        return Err(Error::Dimension {
                            op: "nll_seg",
                            msg: format!("label {lab} out of range for {cl} classes"),
                        });
                    }
                    total -= lp[((b * cl + lab as usize) * h + y) * w + x];
                    n_valid += 1;
                }
            }
        }
        if n_valid == 0 {
            return Err(Error::AllPixelsIgnored);
        }
        let needs = self.needs(log_probs);
        Ok(self.push(
            vec![],
            vec![total / n_valid as f64],
            Op::NllSeg {
                log_probs,
                labels: labels.clone(),
                ignore,
                n_valid,
            },
            needs,
        ))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse pass from a scalar root. Leaf gradients are retained and
    /// readable through [`Graph::grad`]; the record is consumed.
    pub fn backward(&mut self, root: TensorId) -> Result<()> {
        if self.consumed {
            return Err(Error::BackwardConsumed);
        }
        self.consumed = true;
        if self.numel(root) != 1 {
            return Err(Error::NonScalarRoot {
                shape: self.shape(root).to_vec(),
            });
        }
        self.grads = Vec::with_capacity(self.nodes.len());
        self.grads.resize_with(self.nodes.len(), || None);
        self.grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].needs_grad {
                self.grads[idx] = None;
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                continue; // keep leaf gradients
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g);
        }
        Ok(())
    }

    fn ensure_grad(&mut self, id: TensorId) -> &mut Vec<f64> {
        let numel = self.nodes[id.0].data.len();
        self.grads[id.0].get_or_insert_with(|| vec![0.0; numel])
    }

    fn accumulate_broadcast(&mut self, id: TensorId, grad: &[f64], grad_shape: &[usize]) {
        if !self.needs(id) {
            return;
        }
        let target_shape = self.nodes[id.0].shape.clone();
        let target = self.ensure_grad(id);
        reduce_grad_into(grad, grad_shape, target, &target_shape);
    }

    fn propagate(&mut self, idx: usize, g: &[f64]) {
        let op = self.nodes[idx].op.clone();
        let out_shape = self.nodes[idx].shape.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate_broadcast(a, g, &out_shape);
                self.accumulate_broadcast(b, g, &out_shape);
            }
            Op::Sub(a, b) => {
                self.accumulate_broadcast(a, g, &out_shape);
                if self.needs(b) {
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    self.accumulate_broadcast(b, &neg, &out_shape);
                }
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    let da = self.broadcast_scaled(g, &out_shape, b, |gv, bv| gv * bv);
                    self.accumulate_broadcast(a, &da, &out_shape);
                }
                if self.needs(b) {
                    let db = self.broadcast_scaled(g, &out_shape, a, |gv, av| gv * av);
                    self.accumulate_broadcast(b, &db, &out_shape);
                }
            }
            Op::Div(a, b) => {
                if self.needs(a) {
                    let da = self.broadcast_scaled(g, &out_shape, b, |gv, bv| gv / bv);
                    self.accumulate_broadcast(a, &da, &out_shape);
                }
                if self.needs(b) {
                    // d/db (a/b) = -a / b^2 = -out / b
                    let out = &self.nodes[idx].data;
                    let tmp: Vec<f64> = g.iter().zip(out).map(|(gv, ov)| -gv * ov).collect();
                    let db = self.broadcast_scaled(&tmp, &out_shape, b, |t, bv| t / bv);
                    self.accumulate_broadcast(b, &db, &out_shape);
                }
            }
            Op::AddScalar(a) => self.accumulate_broadcast(a, g, &out_shape),
            Op::MulScalar(a, c) => {
                let da: Vec<f64> = g.iter().map(|v| v * c).collect();
                self.accumulate_broadcast(a, &da, &out_shape);
            }
            Op::ClampMin(a, floor) => {
                let src = &self.nodes[a.0].data;
                let da: Vec<f64> = g
                    .iter()
                    .zip(src)
                    .map(|(gv, x)| if *x > floor { *gv } else { 0.0 })
                    .collect();
                self.accumulate_broadcast(a, &da, &out_shape);
            }
            Op::Relu(a) => {
                let src = &self.nodes[a.0].data;
                let da: Vec<f64> = g
                    .iter()
                    .zip(src)
                    .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.accumulate_broadcast(a, &da, &out_shape);
            }
            Op::Exp(a) => {
                let out = &self.nodes[idx].data;
                let da: Vec<f64> = g.iter().zip(out).map(|(gv, y)| gv * y).collect();
                self.accumulate_broadcast(a, &da, &out_shape);
            }
            Op::Sqrt(a) => {
                let out = &self.nodes[idx].data;
                let da: Vec<f64> = g.iter().zip(out).map(|(gv, y)| gv / (2.0 * y)).collect();
                self.accumulate_broadcast(a, &da, &out_shape);
            }
            Op::Reshape(a) => {
                if self.needs(a) {
                    let target = self.ensure_grad(a);
                    for (t, gv) in target.iter_mut().zip(g) {
                        *t += gv;
                    }
                }
            }
            Op::BroadcastTo(a) => self.accumulate_broadcast(a, g, &out_shape),
            Op::Concat(parts, axis) => {
                let outer: usize = out_shape[..axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let total = out_shape[axis];
                let mut offset = 0usize;
                for p in parts {
                    let ext = self.nodes[p.0].shape[axis];
                    if self.needs(p) {
                        let mut gp = vec![0.0; self.nodes[p.0].data.len()];
                        for o in 0..outer {
                            let src_base = (o * total + offset) * inner;
                            let dst_base = o * ext * inner;
                            gp[dst_base..dst_base + ext * inner]
                                .copy_from_slice(&g[src_base..src_base + ext * inner]);
                        }
                        let shape = self.nodes[p.0].shape.clone();
                        self.accumulate_broadcast(p, &gp, &shape);
                    }
                    offset += ext;
                }
            }
            Op::ReduceSum(a) => {
                // keepdim output broadcasts straight back
                let da = self.expand_like(g, &out_shape, a);
                self.accumulate_direct(a, &da);
            }
            Op::ReduceMean(a, ref axes) => {
                let count: usize = axes.iter().map(|&ax| self.nodes[a.0].shape[ax]).product();
                let inv = 1.0 / count as f64;
                let scaled: Vec<f64> = g.iter().map(|v| v * inv).collect();
                let da = self.expand_like(&scaled, &out_shape, a);
                self.accumulate_direct(a, &da);
            }
            Op::Softmax(a, axis) => {
                let y = &self.nodes[idx].data;
                let (outer, ext, inner) = self.row_split(TensorId(idx), axis).unwrap();
                let mut da = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * ext * inner + i;
                        let mut dot = 0.0;
                        for k in 0..ext {
                            let p = base + k * inner;
                            dot += g[p] * y[p];
                        }
                        for k in 0..ext {
                            let p = base + k * inner;
                            da[p] = y[p] * (g[p] - dot);
                        }
                    }
                }
                self.accumulate_direct(a, &da);
            }
            Op::LogSoftmax(a, axis) => {
                let y = &self.nodes[idx].data;
                let (outer, ext, inner) = self.row_split(TensorId(idx), axis).unwrap();
                let mut da = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * ext * inner + i;
                        let mut sum_g = 0.0;
                        for k in 0..ext {
                            sum_g += g[base + k * inner];
                        }
                        for k in 0..ext {
                            let p = base + k * inner;
                            da[p] = g[p] - y[p].exp() * sum_g;
                        }
                    }
                }
                self.accumulate_direct(a, &da);
            }
            Op::Matmul(a, b) => {
                let (m, k) = {
                    let s = &self.nodes[a.0].shape;
                    (s[0], s[1])
                };
                let n = self.nodes[b.0].shape[1];
                if self.needs(a) {
                    let db = &self.nodes[b.0].data;
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let brow = &db[p * n..(p + 1) * n];
                            let grow = &g[i * n..(i + 1) * n];
                            let mut acc = 0.0;
                            for (gv, bv) in grow.iter().zip(brow) {
                                acc += gv * bv;
                            }
                            da[i * k + p] = acc;
                        }
                    }
                    self.accumulate_direct(a, &da);
                }
                if self.needs(b) {
                    let dat = &self.nodes[a.0].data;
                    let mut dbg = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let av = dat[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            let grow = &g[i * n..(i + 1) * n];
                            let drow = &mut dbg[p * n..(p + 1) * n];
                            for (d, gv) in drow.iter_mut().zip(grow) {
                                *d += av * gv;
                            }
                        }
                    }
                    self.accumulate_direct(b, &dbg);
                }
            }
            Op::Conv2d {
                input,
                weight,
                stride,
                padding,
            } => {
                let si = self.nodes[input.0].shape.clone();
                let sw = self.nodes[weight.0].shape.clone();
                let (n, c, h, w) = (si[0], si[1], si[2], si[3]);
                let (oc, kh, kw) = (sw[0], sw[2], sw[3]);
                if self.needs(input) {
                    let mut gi = vec![0.0; n * c * h * w];
                    conv::conv2d_backward_data(
                        g,
                        n,
                        c,
                        h,
                        w,
                        &self.nodes[weight.0].data,
                        oc,
                        kh,
                        kw,
                        stride,
                        padding,
                        &mut gi,
                    );
                    self.accumulate_direct(input, &gi);
                }
                if self.needs(weight) {
                    let mut gw = vec![0.0; oc * c * kh * kw];
                    conv::conv2d_backward_weight(
                        g,
                        &self.nodes[input.0].data,
                        n,
                        c,
                        h,
                        w,
                        oc,
                        kh,
                        kw,
                        stride,
                        padding,
                        &mut gw,
                    );
                    self.accumulate_direct(weight, &gw);
                }
            }
            Op::Upsample2(a) => {
                let s = self.nodes[a.0].shape.clone();
                let mut gi = vec![0.0; self.nodes[a.0].data.len()];
                conv::upsample2_backward(g, s[0], s[1], s[2], s[3], &mut gi);
                self.accumulate_direct(a, &gi);
            }
            Op::NllSeg {
                log_probs,
                ref labels,
                ignore,
                n_valid,
            } => {
                let s = self.nodes[log_probs.0].shape.clone();
                let (n, cl, h, w) = (s[0], s[1], s[2], s[3]);
                let scale = g[0] / n_valid as f64;
                let mut da = vec![0.0; self.nodes[log_probs.0].data.len()];
                for b in 0..n {
                    for y in 0..h {
                        for x in 0..w {
                            let lab = labels.labels[(b * h + y) * w + x];
                            if lab == ignore {
                                continue;
                            }
                            da[((b * cl + lab as usize) * h + y) * w + x] -= scale;
                        }
                    }
                }
                self.accumulate_direct(log_probs, &da);
            }
        }
    }

    fn accumulate_direct(&mut self, id: TensorId, grad: &[f64]) {
        if !self.needs(id) {
            return;
        }
        let target = self.ensure_grad(id);
        for (t, gv) in target.iter_mut().zip(grad) {
            *t += gv;
        }
    }

    /// Elementwise combine of an output-shaped gradient with the broadcast
    /// values of `other`, producing an output-shaped buffer.
    fn broadcast_scaled(
        &self,
        g: &[f64],
        out_shape: &[usize],
        other: TensorId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Vec<f64> {
        let o_shape = &self.nodes[other.0].shape;
        let o_data = &self.nodes[other.0].data;
        if o_shape.as_slice() == out_shape {
            return g.iter().zip(o_data).map(|(gv, ov)| f(*gv, *ov)).collect();
        }
        let strides = broadcast_strides(o_shape, out_shape.len());
        let mut out = Vec::with_capacity(g.len());
        let mut walker = BroadcastWalker::new(out_shape, &strides, &strides);
        for gv in g.iter() {
            out.push(f(*gv, o_data[walker.indices().0]));
            walker.step();
        }
        out
    }

    /// Broadcast a keepdim-reduced gradient back over the original shape.
    fn expand_like(&self, g: &[f64], g_shape: &[usize], target: TensorId) -> Vec<f64> {
        let t_shape = &self.nodes[target.0].shape;
        let strides = broadcast_strides(g_shape, t_shape.len());
        let numel: usize = t_shape.iter().product();
        let mut out = Vec::with_capacity(numel);
        let mut walker = BroadcastWalker::new(t_shape, &strides, &strides);
        for _ in 0..numel {
            out.push(g[walker.indices().0]);
            walker.step();
        }
        out
    }
}

/// Odometer over an output shape tracking two strided source indices.
struct BroadcastWalker<'a> {
    shape: &'a [usize],
    sa: &'a [usize],
    sb: &'a [usize],
    coords: Vec<usize>,
    ia: usize,
    ib: usize,
}

impl<'a> BroadcastWalker<'a> {
    fn new(shape: &'a [usize], sa: &'a [usize], sb: &'a [usize]) -> Self {
        Self {
            shape,
            sa,
            sb,
            coords: vec![0; shape.len()],
            ia: 0,
            ib: 0,
        }
    }

    #[inline]
    fn indices(&self) -> (usize, usize) {
        (self.ia, self.ib)
    }

    #[inline]
    fn step(&mut self) {
        for d in (0..self.shape.len()).rev() {
            self.coords[d] += 1;
            self.ia += self.sa[d];
            self.ib += self.sb[d];
            if self.coords[d] < self.shape[d] {
                return;
            }
            self.ia -= self.sa[d] * self.shape[d];
            self.ib -= self.sb[d] * self.shape[d];
            self.coords[d] = 0;
        }
    }
}
