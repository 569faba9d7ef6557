//! Layer- and network-level properties of the calibrated normalization
//! variants: endpoint equivalences, batching invariance, simplex
//! constraints, and conversion contracts.

use instcal_core::graph::Graph;
use instcal_core::net::{build, convert_model, SegNet, SegNetConfig};
use instcal_core::norm::{
    bn_forward_eval, instcal_c_coefficients, instcal_c_forward, instcal_u_forward, CalibrationC,
    CalibrationU, Mlp, Mode, NormLayerState, NormVariant, StatsScope,
};
use instcal_core::Tensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

fn rand_state(rng: &mut ChaCha8Rng, c: usize) -> NormLayerState {
    NormLayerState {
        mu_pop: (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        var_pop: (0..c).map(|_| rng.gen_range(0.2..2.0)).collect(),
        gamma: (0..c).map(|_| rng.gen_range(0.5..1.5)).collect(),
        beta: (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        momentum: 0.1,
        epsilon: 1e-5,
        mode: Mode::Eval,
    }
}

#[test]
fn zero_calibration_equivalence_randomized() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = 3;
        let st = rand_state(&mut rng, c);
        let x_t = rand_tensor(&mut rng, vec![2, c, 4, 4], -2.0, 2.0);
        let mut g = Graph::new();
        let x = g.leaf(&x_t, false);
        let cal = CalibrationU {
            m_mu: vec![0.0; c],
            m_sigma: vec![0.0; c],
        };
        let y = instcal_u_forward(&mut g, x, &st, &cal).unwrap();
        let x2 = g.leaf(&x_t, false);
        let y2 = bn_forward_eval(&mut g, x2, &st).unwrap();
        for (a, b) in g.data(y).iter().zip(g.data(y2)) {
            assert!((a - b).abs() <= 1e-12, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn full_calibration_instance_norm_behavior() {
    // m=1, gamma=1, beta=0: every sample-channel plane has |mean| <= 1e-9
    // and variance in [var/(var+eps) - 1e-9, 1]
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let c = 2;
        let mut st = rand_state(&mut rng, c);
        st.gamma = vec![1.0; c];
        st.beta = vec![0.0; c];
        let (h, w) = (5, 5);
        let x_t = rand_tensor(&mut rng, vec![3, c, h, w], -2.0, 2.0);
        let mut g = Graph::new();
        let x = g.leaf(&x_t, false);
        let cal = CalibrationU {
            m_mu: vec![1.0; c],
            m_sigma: vec![1.0; c],
        };
        let y = instcal_u_forward(&mut g, x, &st, &cal).unwrap();
        let d = g.data(y);
        let hw = h * w;
        for plane in 0..3 * c {
            let vals = &d[plane * hw..(plane + 1) * hw];
            let mean: f64 = vals.iter().sum::<f64>() / hw as f64;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / hw as f64;
            assert!(mean.abs() <= 1e-9, "plane {plane} mean {mean}");
            let src = &x_t.data[plane * hw..(plane + 1) * hw];
            let src_mean: f64 = src.iter().sum::<f64>() / hw as f64;
            let src_var: f64 =
                src.iter().map(|v| (v - src_mean) * (v - src_mean)).sum::<f64>() / hw as f64;
            if src_var > 1e-6 {
                let lower = src_var / (src_var + st.epsilon) - 1e-9;
                assert!(
                    var >= lower && var <= 1.0 + 1e-12,
                    "plane {plane} var {var} not in [{lower}, 1]"
                );
            }
        }
    }
}

#[test]
fn batching_invariance_is_bitwise() {
    // per-image outputs are identical for any partition and ordering
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let c = 3;
    let st = rand_state(&mut rng, c);
    let images: Vec<Tensor> = (0..5)
        .map(|_| rand_tensor(&mut rng, vec![1, c, 4, 4], -1.5, 1.5))
        .collect();
    let cal_u = CalibrationU {
        m_mu: (0..c).map(|_| rng.gen_range(0.0..1.0)).collect(),
        m_sigma: (0..c).map(|_| rng.gen_range(0.0..1.0)).collect(),
    };
    let cal_c = CalibrationC {
        k: 3,
        basis_mu: (0..3)
            .map(|_| (0..c).map(|_| rng.gen_range(0.0..0.8)).collect())
            .collect(),
        basis_sigma: (0..3)
            .map(|_| (0..c).map(|_| rng.gen_range(0.0..0.8)).collect())
            .collect(),
        mlp_mu: Mlp {
            w1: rand_tensor(&mut rng, vec![2 * c, 4], -0.6, 0.6),
            b1: vec![0.1, -0.1, 0.0, 0.2],
            w2: rand_tensor(&mut rng, vec![4, 3], -0.6, 0.6),
            b2: vec![0.0, 0.1, -0.1],
        },
        mlp_sigma: Mlp {
            w1: rand_tensor(&mut rng, vec![2 * c, 4], -0.6, 0.6),
            b1: vec![0.0; 4],
            w2: rand_tensor(&mut rng, vec![4, 3], -0.6, 0.6),
            b2: vec![0.05, 0.0, 0.0],
        },
    };

    let single_u: Vec<Vec<f64>> = images
        .iter()
        .map(|img| {
            let mut g = Graph::new();
            let x = g.leaf(img, false);
            let y = instcal_u_forward(&mut g, x, &st, &cal_u).unwrap();
            g.data(y).to_vec()
        })
        .collect();
    let single_c: Vec<Vec<f64>> = images
        .iter()
        .map(|img| {
            let mut g = Graph::new();
            let x = g.leaf(img, false);
            let y = instcal_c_forward(&mut g, x, &st, &cal_c).unwrap();
            g.data(y).to_vec()
        })
        .collect();

    // batch in two partitions and a reversed ordering
    for order in [vec![0usize, 1, 2, 3, 4], vec![4, 2, 0, 3, 1]] {
        for chunk in [2usize, 3, 5] {
            for part in order.chunks(chunk) {
                let batch_data: Vec<f64> = part
                    .iter()
                    .flat_map(|&i| images[i].data.clone())
                    .collect();
                let batch = Tensor::new(vec![part.len(), c, 4, 4], batch_data);
                let mut g = Graph::new();
                let x = g.leaf(&batch, false);
                let yu = instcal_u_forward(&mut g, x, &st, &cal_u).unwrap();
                let du = g.data(yu).to_vec();
                let x2 = g.leaf(&batch, false);
                let yc = instcal_c_forward(&mut g, x2, &st, &cal_c).unwrap();
                let dc = g.data(yc).to_vec();
                let plane = c * 16;
                for (pos, &i) in part.iter().enumerate() {
                    assert_eq!(
                        &du[pos * plane..(pos + 1) * plane],
                        single_u[i].as_slice(),
                        "instcal-u image {i} differs in batch"
                    );
                    assert_eq!(
                        &dc[pos * plane..(pos + 1) * plane],
                        single_c[i].as_slice(),
                        "instcal-c image {i} differs in batch"
                    );
                }
            }
        }
    }
}

#[test]
fn coefficients_live_on_the_simplex() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let c = 4;
        let k = 5;
        let mlp = Mlp {
            w1: rand_tensor(&mut rng, vec![2 * c, 6], -1.5, 1.5),
            b1: (0..6).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            w2: rand_tensor(&mut rng, vec![6, k], -1.5, 1.5),
            b2: (0..k).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        };
        let pop: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ins = rand_tensor(&mut rng, vec![3, c], -1.0, 1.0);
        let coeff = instcal_c_coefficients(&pop, &ins, &mlp).unwrap();
        for row in 0..3 {
            let r = &coeff.data[row * k..(row + 1) * k];
            assert!(r.iter().all(|v| *v >= 0.0));
            let s: f64 = r.iter().sum();
            assert!((s - 1.0).abs() <= 1e-12, "row {row} sums to {s}");
        }
    }
}

#[test]
fn effective_strength_stays_in_basis_hull() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let c = 3;
    let k = 4;
    let basis: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..c).map(|_| rng.gen_range(-0.5..1.5)).collect())
        .collect();
    let mlp = Mlp {
        w1: rand_tensor(&mut rng, vec![2 * c, 5], -2.0, 2.0),
        b1: vec![0.0; 5],
        w2: rand_tensor(&mut rng, vec![5, k], -2.0, 2.0),
        b2: vec![0.0; k],
    };
    let pop: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ins = rand_tensor(&mut rng, vec![6, c], -1.0, 1.0);
    let coeff = instcal_c_coefficients(&pop, &ins, &mlp).unwrap();
    for row in 0..6 {
        let cs = &coeff.data[row * k..(row + 1) * k];
        for ch in 0..c {
            let eff: f64 = (0..k).map(|i| cs[i] * basis[i][ch]).sum();
            let lo = basis.iter().map(|b| b[ch]).fold(f64::INFINITY, f64::min);
            let hi = basis.iter().map(|b| b[ch]).fold(f64::NEG_INFINITY, f64::max);
            assert!(
                eff >= lo - 1e-12 && eff <= hi + 1e-12,
                "row {row} ch {ch}: {eff} outside [{lo}, {hi}]"
            );
        }
    }
}

// ── network-level contracts ─────────────────────────────────────────

fn eval_logits(net: &SegNet, images: &Tensor) -> Vec<f64> {
    let mut g = Graph::new();
    let t = net
        .forward(&mut g, images, Mode::Eval, StatsScope::PerInstance, false)
        .unwrap();
    g.data(t.logits).to_vec()
}

/// Accumulate some fake population statistics so conversion operates on a
/// "trained" model rather than the identity init.
fn seeded_net() -> SegNet {
    let mut net = build(&SegNetConfig::default(), 33);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for layer in net.norm_layers() {
        let c = net
            .store
            .expect(&format!("{layer}.gamma"))
            .unwrap()
            .tensor
            .numel();
        let mu: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let var: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..1.5)).collect();
        net.store.set_data(&format!("{layer}.mu_pop"), mu).unwrap();
        net.store.set_data(&format!("{layer}.var_pop"), var).unwrap();
    }
    net
}

#[test]
fn network_zero_calibration_equivalence() {
    let net = seeded_net();
    let mut converted = convert_model(&net, &NormVariant::InstCalU, 5).unwrap();
    for layer in converted.norm_layers() {
        let c = converted
            .store
            .expect(&format!("{layer}.gamma"))
            .unwrap()
            .tensor
            .numel();
        converted
            .store
            .set_data(&format!("{layer}.m_mu"), vec![0.0; c])
            .unwrap();
        converted
            .store
            .set_data(&format!("{layer}.m_sigma"), vec![0.0; c])
            .unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let images = rand_tensor(&mut rng, vec![2, 3, 16, 16], 0.0, 1.0);
    let a = eval_logits(&net, &images);
    let b = eval_logits(&converted, &images);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
    }
}

#[test]
fn converted_init_equals_manual_default() {
    let net = seeded_net();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let images = rand_tensor(&mut rng, vec![1, 3, 16, 16], 0.0, 1.0);

    let mut manual = net.clone();
    manual.config.norm = NormVariant::Manual { m: 0.1 };
    let reference = eval_logits(&manual, &images);

    let u = convert_model(&net, &NormVariant::InstCalU, 5).unwrap();
    let got_u = eval_logits(&u, &images);
    for (x, y) in reference.iter().zip(&got_u) {
        assert!((x - y).abs() <= 1e-12, "instcal-u init: {x} vs {y}");
    }

    let c8 = convert_model(&net, &NormVariant::InstCalC { k: 8 }, 5).unwrap();
    let got_c = eval_logits(&c8, &images);
    for (x, y) in reference.iter().zip(&got_c) {
        assert!((x - y).abs() <= 1e-12, "instcal-c init: {x} vs {y}");
    }
}

#[test]
fn network_forward_is_batching_invariant() {
    let net = seeded_net();
    let converted = convert_model(&net, &NormVariant::InstCalU, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let imgs: Vec<Tensor> = (0..3)
        .map(|_| rand_tensor(&mut rng, vec![1, 3, 16, 16], 0.0, 1.0))
        .collect();
    let singles: Vec<Vec<f64>> = imgs.iter().map(|i| eval_logits(&converted, i)).collect();
    let batch_data: Vec<f64> = imgs.iter().flat_map(|i| i.data.clone()).collect();
    let batch = Tensor::new(vec![3, 3, 16, 16], batch_data);
    let together = eval_logits(&converted, &batch);
    let plane = together.len() / 3;
    for i in 0..3 {
        assert_eq!(
            &together[i * plane..(i + 1) * plane],
            singles[i].as_slice(),
            "image {i} differs when batched"
        );
    }
}

#[test]
fn nan_input_names_the_layer() {
    let net = seeded_net();
    let mut images = Tensor::zeros(vec![1, 3, 16, 16]);
    images.data[5] = f64::NAN;
    let mut g = Graph::new();
    let err = net
        .forward(&mut g, &images, Mode::Eval, StatsScope::PerInstance, false)
        .unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("layer 0"), "unexpected error: {msg}");
}
