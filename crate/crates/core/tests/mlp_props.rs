use proptest::prelude::*;
use vishash::mlp::{softmax, HeadKind, MlpModel, Sgd};

fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("l{i}")).collect()
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, 1..20)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn scaling_the_output_layer_keeps_the_top_label(
        seed in any::<u64>(),
        x in prop::collection::vec(-1.0f64..1.0, 6),
        c in 0.1f64..10.0,
    ) {
        let model = MlpModel::init(6, 5, labels(4), HeadKind::Softmax, seed);
        let before = model.forward(&x).unwrap();
        let mut scaled = model.clone();
        scaled.output.weight.iter_mut().for_each(|w| *w *= c);
        scaled.output.bias.iter_mut().for_each(|b| *b *= c);
        let after = scaled.forward(&x).unwrap();
        let top = argmax(&before);
        prop_assert!(after[top] >= after.iter().copied().fold(f64::NEG_INFINITY, f64::max) - 1e-12);
    }

    #[test]
    fn weight_decay_shrinks_weights_under_zero_gradient(
        w in prop::collection::vec(-4.0f64..4.0, 1..10),
        lr in 0.001f64..1.0,
        decay in 0.0f64..0.1,
    ) {
        let mut params = w.clone();
        let zeros = vec![0.0; w.len()];
        Sgd::new(0.0, decay).step(lr, &mut [&mut params], &[&zeros]);
        for (got, w0) in params.iter().zip(&w) {
            let expected = w0 * (1.0 - lr * decay);
            prop_assert!((got - expected).abs() <= 1e-15 * w0.abs().max(1.0));
        }
    }
}

#[test]
fn weight_decay_step_is_exact_on_dyadic_values() {
    // Every intermediate is representable, so no rounding happens.
    let w = [1.0, -0.5, 0.25, 3.0];
    let mut params = w.to_vec();
    Sgd::new(0.0, 0.125).step(0.5, &mut [&mut params], &[&[0.0; 4]]);
    let expected: Vec<f64> = w.iter().map(|v| v * (1.0 - 0.5 * 0.125)).collect();
    assert_eq!(params, expected);
}
