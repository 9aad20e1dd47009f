use proptest::prelude::*;
use reefgrad_core::tensor::Tensor;
use reefgrad_core::train::{adam_step, sgd_step, AdamConfig, AdamState};

/// Textbook scalar Adam: returns the parameter after each step.
fn scalar_adam(w0: f64, grads: &[f64], lr: f64) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
    let mut out = Vec::new();
    for (i, &g) in grads.iter().enumerate() {
        let t = (i + 1) as i32;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        w -= lr * mh / (vh.sqrt() + eps);
        out.push(w);
    }
    out
}

#[test]
fn sgd_hand_values() {
    let mut w = Tensor::<f64>::new(&[2], vec![1.0, -2.0]).unwrap();
    let g = Tensor::new(&[2], vec![0.5, 0.0]).unwrap();
    sgd_step(&mut w, &g, 0.1).unwrap();
    assert_eq!(w.data(), &[0.95, -2.0]);
    assert!(sgd_step(&mut w, &Tensor::zeros(&[3]), 0.1).is_err());
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut w = Tensor::<f64>::new(&[3], vec![0.0, 1.0, -1.0]).unwrap();
    let g = Tensor::new(&[3], vec![3.0, -0.01, 250.0]).unwrap();
    let mut state = AdamState::zeros(&[3]);
    adam_step(&mut w, &g, &mut state, 1, 0.01, &AdamConfig::default()).unwrap();
    for (after, (before, sign)) in w.data().iter().zip([(0.0, 1.0), (1.0, -1.0), (-1.0, 1.0)]) {
        assert!((before - after - 0.01 * sign).abs() < 1e-8);
    }
    let mut s = AdamState::zeros(&[3]);
    assert!(adam_step(&mut w, &g, &mut s, 0, 0.01, &AdamConfig::default()).is_err());
    let mut bad = AdamState::zeros(&[2]);
    assert!(adam_step(&mut w, &g, &mut bad, 1, 0.01, &AdamConfig::default()).is_err());
}

#[test]
fn adam_ignores_zero_gradient_from_zero_state() {
    let mut w = Tensor::<f32>::new(&[2], vec![0.3, -0.7]).unwrap();
    let before = w.clone();
    let mut state = AdamState::zeros(&[2]);
    adam_step(&mut w, &Tensor::zeros(&[2]), &mut state, 1, 0.1, &AdamConfig::default()).unwrap();
    assert!(w.bitwise_eq(&before));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sgd_matches_scalar_rule(
        w in prop::collection::vec(-5.0f64..5.0, 12),
        g in prop::collection::vec(-5.0f64..5.0, 12),
        lr in 1e-4f64..1.0,
    ) {
        let mut t = Tensor::new(&[3, 4], w.clone()).unwrap();
        sgd_step(&mut t, &Tensor::new(&[3, 4], g.clone()).unwrap(), lr).unwrap();
        for i in 0..12 {
            prop_assert_eq!(t.data()[i], w[i] - lr * g[i]);
        }
    }

    #[test]
    fn adam_matches_scalar_oracle(
        w0 in prop::collection::vec(-2.0f64..2.0, 4),
        grads in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 10),
        lr in 1e-4f64..1e-1,
    ) {
        let mut w = Tensor::new(&[4], w0.clone()).unwrap();
        let mut state = AdamState::zeros(&[4]);
        for (t, g) in grads.iter().enumerate() {
            adam_step(&mut w, &Tensor::new(&[4], g.clone()).unwrap(), &mut state, t as u64 + 1, lr, &AdamConfig::default()).unwrap();
        }
        for i in 0..4 {
            let column: Vec<f64> = grads.iter().map(|g| g[i]).collect();
            let expected = *scalar_adam(w0[i], &column, lr).last().unwrap();
            let err = (w.data()[i] - expected).abs() / expected.abs().max(1e-12);
            prop_assert!(err <= 1e-6, "element {} got {} expected {}", i, w.data()[i], expected);
        }
    }
}
