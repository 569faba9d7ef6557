//! Direct 2D cross-correlation kernels (forward, input-gradient,
//! weight-gradient) plus nearest-neighbor upsampling. These are the hot
//! loops of the whole workspace; inner loops run over the contiguous
//! output/input width so they vectorize.

pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

/// out[n,oc,oy,ox] = sum_{ic,ky,kx} in[n,ic,oy*s+ky-p, ox*s+kx-p] * w[oc,ic,ky,kx]
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward(
    input: &[f64],
    n: usize,
    in_c: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    out_c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    output: &mut [f64],
) {
    let oh = conv_out_extent(h, kh, stride, padding);
    let ow = conv_out_extent(w, kw, stride, padding);
    debug_assert_eq!(input.len(), n * in_c * h * w);
    debug_assert_eq!(weight.len(), out_c * in_c * kh * kw);
    debug_assert_eq!(output.len(), n * out_c * oh * ow);

    for b in 0..n {
        let in_img = &input[b * in_c * h * w..(b + 1) * in_c * h * w];
        let out_img = &mut output[b * out_c * oh * ow..(b + 1) * out_c * oh * ow];
        for oc in 0..out_c {
            let out_plane = &mut out_img[oc * oh * ow..(oc + 1) * oh * ow];
            for ic in 0..in_c {
                let in_plane = &in_img[ic * h * w..(ic + 1) * h * w];
                let w_base = (oc * in_c + ic) * kh * kw;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = weight[w_base + ky * kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        // valid output ranges so input indices stay in bounds
                        let (oy0, oy1) = valid_range(oh, h, ky, stride, padding);
                        let (ox0, ox1) = valid_range(ow, w, kx, stride, padding);
                        for oy in oy0..oy1 {
                            let iy = oy * stride + ky - padding;
                            let in_row = &in_plane[iy * w..(iy + 1) * w];
                            let out_row = &mut out_plane[oy * ow..(oy + 1) * ow];
                            if stride == 1 {
                                let off = kx as isize - padding as isize;
                                let src = &in_row[(ox0 as isize + off) as usize
                                    ..(ox1 as isize + off) as usize];
                                let dst = &mut out_row[ox0..ox1];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += wv * s;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    let ix = ox * stride + kx - padding;
                                    out_row[ox] += wv * in_row[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// din[n,ic,iy,ix] += sum over the output positions that touched it.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_data(
    grad_out: &[f64],
    n: usize,
    in_c: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    out_c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    grad_in: &mut [f64],
) {
    let oh = conv_out_extent(h, kh, stride, padding);
    let ow = conv_out_extent(w, kw, stride, padding);
    for b in 0..n {
        let go_img = &grad_out[b * out_c * oh * ow..(b + 1) * out_c * oh * ow];
        let gi_img = &mut grad_in[b * in_c * h * w..(b + 1) * in_c * h * w];
        for ic in 0..in_c {
            let gi_plane = &mut gi_img[ic * h * w..(ic + 1) * h * w];
            for oc in 0..out_c {
                let go_plane = &go_img[oc * oh * ow..(oc + 1) * oh * ow];
                let w_base = (oc * in_c + ic) * kh * kw;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = weight[w_base + ky * kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (oy0, oy1) = valid_range(oh, h, ky, stride, padding);
                        let (ox0, ox1) = valid_range(ow, w, kx, stride, padding);
                        for oy in oy0..oy1 {
                            let iy = oy * stride + ky - padding;
                            let go_row = &go_plane[oy * ow..(oy + 1) * ow];
                            let gi_row = &mut gi_plane[iy * w..(iy + 1) * w];
                            if stride == 1 {
                                let off = kx as isize - padding as isize;
                                let dst = &mut gi_row[(ox0 as isize + off) as usize
                                    ..(ox1 as isize + off) as usize];
                                let src = &go_row[ox0..ox1];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += wv * s;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    let ix = ox * stride + kx - padding;
                                    gi_row[ix] += wv * go_row[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// dw[oc,ic,ky,kx] += sum_{n,oy,ox} grad_out[n,oc,oy,ox] * in[n,ic,...]
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_weight(
    grad_out: &[f64],
    input: &[f64],
    n: usize,
    in_c: usize,
    h: usize,
    w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    grad_weight: &mut [f64],
) {
    let oh = conv_out_extent(h, kh, stride, padding);
    let ow = conv_out_extent(w, kw, stride, padding);
    for b in 0..n {
        let go_img = &grad_out[b * out_c * oh * ow..(b + 1) * out_c * oh * ow];
        let in_img = &input[b * in_c * h * w..(b + 1) * in_c * h * w];
        for oc in 0..out_c {
            let go_plane = &go_img[oc * oh * ow..(oc + 1) * oh * ow];
            for ic in 0..in_c {
                let in_plane = &in_img[ic * h * w..(ic + 1) * h * w];
                let w_base = (oc * in_c + ic) * kh * kw;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let (oy0, oy1) = valid_range(oh, h, ky, stride, padding);
                        let (ox0, ox1) = valid_range(ow, w, kx, stride, padding);
                        let mut acc = 0.0;
                        for oy in oy0..oy1 {
                            let iy = oy * stride + ky - padding;
                            let go_row = &go_plane[oy * ow..(oy + 1) * ow];
                            let in_row = &in_plane[iy * w..(iy + 1) * w];
                            if stride == 1 {
                                let off = kx as isize - padding as isize;
                                let src = &in_row[(ox0 as isize + off) as usize
                                    ..(ox1 as isize + off) as usize];
                                for (g, s) in go_row[ox0..ox1].iter().zip(src) {
                                    acc += g * s;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    let ix = ox * stride + kx - padding;
                                    acc += go_row[ox] * in_row[ix];
                                }
                            }
                        }
                        grad_weight[w_base + ky * kw + kx] += acc;
                    }
                }
            }
        }
    }
}

/// Output positions oy with 0 <= oy*stride + k - padding < extent.
fn valid_range(out_extent: usize, in_extent: usize, k: usize, stride: usize, padding: usize) -> (usize, usize) {
    // oy*stride >= padding - k
    let lo = if padding > k {
        (padding - k).div_ceil(stride)
    } else {
        0
    };
    // oy*stride <= in_extent - 1 + padding - k
    let hi_num = in_extent + padding;
    let hi = if hi_num > k {
        (((hi_num - k - 1) / stride) + 1).min(out_extent)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Nearest-neighbor 2x upsample of an N,C,H,W block.
pub fn upsample2_forward(input: &[f64], n: usize, c: usize, h: usize, w: usize, output: &mut [f64]) {
    let (oh, ow) = (2 * h, 2 * w);
    for p in 0..n * c {
        let src = &input[p * h * w..(p + 1) * h * w];
        let dst = &mut output[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            let src_row = &src[(y / 2) * w..(y / 2 + 1) * w];
            let dst_row = &mut dst[y * ow..(y + 1) * ow];
            for x in 0..ow {
                dst_row[x] = src_row[x / 2];
            }
        }
    }
}

pub fn upsample2_backward(grad_out: &[f64], n: usize, c: usize, h: usize, w: usize, grad_in: &mut [f64]) {
    let (oh, ow) = (2 * h, 2 * w);
    for p in 0..n * c {
        let go = &grad_out[p * oh * ow..(p + 1) * oh * ow];
        let gi = &mut grad_in[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            let go_row = &go[y * ow..(y + 1) * ow];
            let gi_row = &mut gi[(y / 2) * w..(y / 2 + 1) * w];
            for x in 0..ow {
                gi_row[x / 2] += go_row[x];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop oracle, no range tricks: walks every output and
    /// kernel position and skips out-of-bounds taps.
    #[allow(clippy::too_many_arguments)]
    fn conv_oracle(
        input: &[f64],
        n: usize,
        in_c: usize,
        h: usize,
        w: usize,
        weight: &[f64],
        out_c: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
    ) -> Vec<f64> {
        let oh = conv_out_extent(h, kh, stride, padding);
        let ow = conv_out_extent(w, kw, stride, padding);
        let mut out = vec![0.0; n * out_c * oh * ow];
        for b in 0..n {
            for oc in 0..out_c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ic in 0..in_c {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - padding as isize;
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let iv = input
                                        [((b * in_c + ic) * h + iy as usize) * w + ix as usize];
                                    let wv = weight[((oc * in_c + ic) * kh + ky) * kw + kx];
                                    acc += iv * wv;
                                }
                            }
                        }
                        out[((b * out_c + oc) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn ones_3x3_sum() {
        let input = vec![1.0; 9];
        let weight = vec![1.0; 9];
        let mut out = vec![0.0; 1];
        conv2d_forward(&input, 1, 1, 3, 3, &weight, 1, 3, 3, 1, 0, &mut out);
        assert_eq!(out, vec![9.0]);
    }

    #[test]
    fn identity_1x1_kernel() {
        let input: Vec<f64> = (0..12).map(|i| i as f64 * 0.5 - 2.0).collect();
        let weight = vec![1.0];
        let mut out = vec![0.0; 12];
        conv2d_forward(&input, 1, 1, 3, 4, &weight, 1, 1, 1, 1, 0, &mut out);
        assert_eq!(out, input);
    }

    #[test]
    fn averaging_kernel_padded_matches_oracle() {
        // 4x4 ramp 0..15, 3x3 kernel of 1/9, padding 1
        let input: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let weight = vec![1.0 / 9.0; 9];
        let mut out = vec![0.0; 16];
        conv2d_forward(&input, 1, 1, 4, 4, &weight, 1, 3, 3, 1, 1, &mut out);
        // center (1,1): mean of 0..8 = 5.0 exactly at avg of [0,1,2,4,5,6,8,9,10]
        assert!((out[5] - 5.0).abs() < 1e-12, "center value {}", out[5]);
        let oracle = conv_oracle(&input, 1, 1, 4, 4, &weight, 1, 3, 3, 1, 1);
        for (a, b) in out.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn strided_padded_matches_oracle() {
        let mut state = 0x12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        };
        for &(n, ic, oc, h, w, k, s, p) in &[
            (2usize, 3usize, 4usize, 7usize, 9usize, 3usize, 1usize, 1usize),
            (1, 2, 3, 8, 8, 3, 2, 1),
            (2, 1, 2, 5, 6, 1, 1, 0),
            (1, 3, 2, 6, 5, 3, 2, 0),
        ] {
            let input: Vec<f64> = (0..n * ic * h * w).map(|_| next()).collect();
            let weight: Vec<f64> = (0..oc * ic * k * k).map(|_| next()).collect();
            let oh = conv_out_extent(h, k, s, p);
            let ow = conv_out_extent(w, k, s, p);
            let mut out = vec![0.0; n * oc * oh * ow];
            conv2d_forward(&input, n, ic, h, w, &weight, oc, k, k, s, p, &mut out);
            let oracle = conv_oracle(&input, n, ic, h, w, &weight, oc, k, k, s, p);
            for (a, b) in out.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12, "mismatch {a} vs {b}");
            }
        }
    }

    #[test]
    fn upsample_round_trip_shapes() {
        let input: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let mut out = vec![0.0; 24];
        upsample2_forward(&input, 1, 1, 2, 3, &mut out);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[1], 0.0);
        assert_eq!(out[2], 1.0);
        assert_eq!(out[6], 0.0);
        // each input cell collects its 2x2 block
        let go = vec![1.0; 24];
        let mut gi = vec![0.0; 6];
        upsample2_backward(&go, 1, 1, 2, 3, &mut gi);
        assert_eq!(gi, vec![4.0; 6]);
    }
}
