//! Known-answer cases for the softmax and segmentation-loss operations,
//! checked against plain scalar reference evaluations.

use instcal_core::graph::Graph;
use instcal_core::{LabelBatch, Tensor};

/// Unshifted direct softmax, the independent scalar reference.
fn softmax_ref(xs: &[f64]) -> Vec<f64> {
    let z: f64 = xs.iter().map(|x| x.exp()).sum();
    xs.iter().map(|x| x.exp() / z).collect()
}

#[test]
fn softmax_uniform_logits() {
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::from_vec(vec![0.0; 7]), false);
    let y = g.softmax(x, 0).unwrap();
    for v in g.data(y) {
        assert!((v - 1.0 / 7.0).abs() < 1e-15);
    }
}

#[test]
fn softmax_exact_exponentials() {
    // logits [ln 1, ln 3] -> [0.25, 0.75]
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::from_vec(vec![0.0, 3.0f64.ln()]), false);
    let y = g.softmax(x, 0).unwrap();
    let d = g.data(y);
    assert!((d[0] - 0.25).abs() < 1e-15);
    assert!((d[1] - 0.75).abs() < 1e-15);
}

#[test]
fn softmax_matches_reference_evaluation() {
    let logits = [2.0, 1.0, 0.1];
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::from_vec(logits.to_vec()), false);
    let y = g.softmax(x, 0).unwrap();
    let expect = softmax_ref(&logits);
    for (a, b) in g.data(y).iter().zip(&expect) {
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }
    let sum: f64 = g.data(y).iter().sum();
    assert!((sum - 1.0).abs() < 1e-12);
}

#[test]
fn softmax_is_shift_stable() {
    // huge logits would overflow an unshifted evaluation
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::from_vec(vec![1000.0, 1001.0]), false);
    let y = g.softmax(x, 0).unwrap();
    let d = g.data(y);
    assert!(d.iter().all(|v| v.is_finite()));
    let expect = softmax_ref(&[0.0, 1.0]);
    assert!((d[0] - expect[0]).abs() < 1e-14);
}

fn cross_entropy(
    logits: Tensor,
    labels: LabelBatch,
    ignore: u32,
) -> instcal_core::Result<f64> {
    let mut g = Graph::new();
    let l = g.leaf(&logits, false);
    let lp = g.log_softmax(l, 1)?;
    let loss = g.nll_seg(lp, &labels, ignore)?;
    Ok(g.value(loss))
}

#[test]
fn cross_entropy_confident_correct_tends_to_zero() {
    // margin -> large: loss -> 0
    let mut data = vec![0.0; 2 * 1 * 1];
    data[0] = 50.0; // class 0 logit
    let logits = Tensor::new(vec![1, 2, 1, 1], data);
    let labels = LabelBatch::new(1, 1, 1, vec![0]);
    let loss = cross_entropy(logits, labels, 255).unwrap();
    assert!(loss >= 0.0 && loss < 1e-12, "loss {loss}");
}

#[test]
fn cross_entropy_uniform_logits_is_ln_classes() {
    for cl in [2usize, 5, 7] {
        let logits = Tensor::zeros(vec![1, cl, 2, 2]);
        let labels = LabelBatch::new(1, 2, 2, vec![0, 1 % cl as u32, 0, (cl - 1) as u32]);
        let loss = cross_entropy(logits, labels, 255).unwrap();
        assert!((loss - (cl as f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn cross_entropy_two_pixel_reference() {
    // 2 pixels, 2 classes, logits [[2,0],[0,1]], labels [0,0]
    // pixel 1: -ln(e^2/(e^2+e^0)); pixel 2: -ln(e^0/(e^0+e^1))
    let logits = Tensor::new(vec![1, 2, 1, 2], vec![2.0, 0.0, 0.0, 1.0]);
    let labels = LabelBatch::new(1, 1, 2, vec![0, 0]);
    let loss = cross_entropy(logits, labels, 255).unwrap();
    let p1 = softmax_ref(&[2.0, 0.0])[0];
    let p2 = softmax_ref(&[0.0, 1.0])[0];
    let expect = -(p1.ln() + p2.ln()) / 2.0;
    assert!((loss - expect).abs() < 1e-14, "{loss} vs {expect}");
}

#[test]
fn cross_entropy_respects_ignore_index() {
    let logits = Tensor::new(vec![1, 2, 1, 2], vec![2.0, 0.0, 0.0, 1.0]);
    let labels = LabelBatch::new(1, 1, 2, vec![0, 255]);
    let loss = cross_entropy(logits, labels, 255).unwrap();
    let p1 = softmax_ref(&[2.0, 0.0])[0];
    assert!((loss + p1.ln()).abs() < 1e-14);
}

#[test]
fn reduce_stats_two_points_and_constant() {
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::from_vec(vec![1.0, 3.0]), false);
    let (m, v) = g.reduce_stats(x, &[0]).unwrap();
    assert_eq!(g.data(m), &[2.0]);
    assert_eq!(g.data(v), &[1.0]);

    let c = g.leaf(&Tensor::full(vec![4, 5], -2.5), false);
    let (m2, v2) = g.reduce_stats(c, &[0, 1]).unwrap();
    assert_eq!(g.data(m2), &[-2.5]);
    assert_eq!(g.data(v2), &[0.0]);
}

#[test]
fn variance_is_never_negative() {
    let mut state = 0xfeedu64;
    let mut next = || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((state >> 33) as f64 / (1u64 << 31) as f64) * 100.0 - 50.0
    };
    for _ in 0..50 {
        let data: Vec<f64> = (0..24).map(|_| next()).collect();
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::new(vec![2, 3, 4], data), false);
        let (_, v) = g.reduce_stats(x, &[0, 2]).unwrap();
        assert!(g.data(v).iter().all(|x| *x >= 0.0));
    }
}

#[test]
fn forward_is_bitwise_reproducible() {
    let data: Vec<f64> = (0..32).map(|i| (i as f64 * 0.7).sin()).collect();
    let run = || {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::new(vec![2, 4, 2, 2], data.clone()), false);
        let (m, v) = g.reduce_stats(x, &[0, 2, 3]).unwrap();
        let s = g.softmax(x, 1).unwrap();
        let a = g.add(m, v).unwrap();
        (g.data(s).to_vec(), g.data(a).to_vec())
    };
    assert_eq!(run(), run());
}
