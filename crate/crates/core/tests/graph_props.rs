//! Property tests over the tensor ops: simplex outputs, estimator
//! positivity, broadcast algebra, and endpoint exactness of the mixing
//! function under arbitrary finite inputs.

use instcal_core::graph::Graph;
use instcal_core::norm::mix;
use instcal_core::Tensor;
use proptest::prelude::*;

fn small_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, len)
}

proptest! {
    #[test]
    fn softmax_outputs_are_a_distribution(data in small_vec(12)) {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::new(vec![3, 4], data), false);
        let y = g.softmax(x, 1).unwrap();
        let d = g.data(y);
        for row in d.chunks(4) {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn variance_is_nonnegative(data in small_vec(24)) {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::new(vec![2, 3, 4], data), false);
        let (_, v) = g.reduce_stats(x, &[0, 2]).unwrap();
        prop_assert!(g.data(v).iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn add_commutes_and_sub_inverts(a in small_vec(8), b in small_vec(8)) {
        let mut g = Graph::new();
        let ta = g.leaf(&Tensor::from_vec(a.clone()), false);
        let tb = g.leaf(&Tensor::from_vec(b.clone()), false);
        let ab = g.add(ta, tb).unwrap();
        let ba = g.add(tb, ta).unwrap();
        prop_assert_eq!(g.data(ab), g.data(ba));
        let diff = g.sub(ab, tb).unwrap();
        for (x, orig) in g.data(diff).iter().zip(&a) {
            prop_assert!((x - orig).abs() <= 1e-9 * orig.abs().max(1.0));
        }
    }

    #[test]
    fn mix_endpoints_exact_for_any_inputs(a in small_vec(6), b in small_vec(6)) {
        let mut g = Graph::new();
        let ta = g.leaf(&Tensor::from_vec(a.clone()), false);
        let tb = g.leaf(&Tensor::from_vec(b.clone()), false);
        let zero = g.scalar(0.0);
        let one = g.scalar(1.0);
        let at0 = mix(&mut g, ta, tb, zero).unwrap();
        let at1 = mix(&mut g, ta, tb, one).unwrap();
        prop_assert_eq!(g.data(at0), a.as_slice());
        prop_assert_eq!(g.data(at1), b.as_slice());
    }

    #[test]
    fn mix_is_monotone_in_m(a in -10.0..10.0f64, b in -10.0..10.0f64, m1 in 0.0..1.0f64, m2 in 0.0..1.0f64) {
        let mut g = Graph::new();
        let ta = g.scalar(a);
        let tb = g.scalar(b);
        let (lo, hi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
        let tlo = g.scalar(lo);
        let thi = g.scalar(hi);
        let vlo = mix(&mut g, ta, tb, tlo).unwrap();
        let vhi = mix(&mut g, ta, tb, thi).unwrap();
        // moving m toward 1 moves the result toward b
        let (vlo, vhi) = (g.value(vlo), g.value(vhi));
        prop_assert!((vhi - b).abs() <= (vlo - b).abs() + 1e-12);
    }
}
