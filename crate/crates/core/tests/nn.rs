use deepstpp::nn::{softplus, Activation, Mlp, MlpSpec};
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = MlpSpec> {
    (1usize..4, prop::collection::vec(1usize..6, 0..3), 1usize..3, prop::bool::ANY).prop_map(|(i, h, o, lin)| {
        MlpSpec::new(i, h, o, if lin { Activation::Linear } else { Activation::Softplus }).unwrap()
    })
}

/// Plain layer-by-layer evaluation from the row-major weights.
fn manual_forward(m: &Mlp, x: &[f64]) -> Vec<f64> {
    let n = m.spec.layer_shapes().len();
    let mut a = x.to_vec();
    for (k, (rows, cols)) in m.spec.layer_shapes().into_iter().enumerate() {
        let w = m.params.weight(&m.spec, k);
        let b = m.params.bias(&m.spec, k);
        let last = k + 1 == n;
        a = (0..rows)
            .map(|i| {
                let z = b[i] + (0..cols).map(|j| w[i * cols + j] * a[j]).sum::<f64>();
                if last && m.spec.output_activation == Activation::Linear {
                    z
                } else {
                    (1.0 + z.exp()).ln()
                }
            })
            .collect();
    }
    a
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn forward_matches_manual_evaluation(spec in spec_strategy(), seed in 0u64..1000, x in prop::collection::vec(-2.0f64..2.0, 3)) {
        let m = Mlp::new(spec, seed);
        let x = &x[..m.spec.input_dim];
        let fast = m.forward(x).unwrap();
        let slow = manual_forward(&m, x);
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn backward_matches_finite_differences(
        spec in spec_strategy(),
        seed in 0u64..1000,
        x in prop::collection::vec(-2.0f64..2.0, 3),
        up in prop::collection::vec(-1.0f64..1.0, 2),
    ) {
        let m = Mlp::new(spec, seed);
        let x = &x[..m.spec.input_dim];
        let up = &up[..m.spec.output_dim];
        let f = |mm: &Mlp, xx: &[f64]| mm.forward(xx).unwrap().iter().zip(up).map(|(a, b)| a * b).sum::<f64>();
        let mut gp = vec![0.0; m.num_params()];
        let gx = m.backward(&m.forward_trace(x), up, &mut gp);
        let h = 1e-6;
        let mut mm = m.clone();
        for i in 0..gp.len() {
            let v = mm.params.values[i];
            mm.params.values[i] = v + h;
            let a = f(&mm, x);
            mm.params.values[i] = v - h;
            let b = f(&mm, x);
            mm.params.values[i] = v;
            let fd = (a - b) / (2.0 * h);
            prop_assert!((gp[i] - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "param {}: {} vs {}", i, gp[i], fd);
        }
        for j in 0..x.len() {
            let mut xp = x.to_vec();
            xp[j] += h;
            let a = f(&m, &xp);
            xp[j] -= 2.0 * h;
            let b = f(&m, &xp);
            let fd = (a - b) / (2.0 * h);
            prop_assert!((gx[j] - fd).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn outputs_finite_for_extreme_inputs(spec in spec_strategy(), seed in 0u64..100, x in prop::collection::vec(-1e6f64..1e6, 3)) {
        let m = Mlp::new(spec, seed);
        let y = m.forward(&x[..m.spec.input_dim]).unwrap();
        prop_assert!(y.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn softplus_networks_are_nonnegative() {
    let spec = MlpSpec::new(2, vec![8, 8], 1, Activation::Softplus).unwrap();
    for seed in 0..20 {
        let m = Mlp::new(spec.clone(), seed);
        for i in 0..50 {
            let x = [(i as f64 * 0.37).sin() * 3.0, (i as f64 * 0.11).cos() * 3.0];
            assert!(m.eval_scalar(&x) >= 0.0);
        }
    }
    assert_eq!(softplus(-800.0), 0.0);
}

#[test]
fn construction_is_deterministic() {
    let spec = MlpSpec::new(1, vec![4], 1, Activation::Linear).unwrap();
    assert_eq!(Mlp::new(spec.clone(), 9), Mlp::new(spec, 9));
}
