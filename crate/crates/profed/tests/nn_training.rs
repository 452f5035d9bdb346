//! Gradient correctness against central finite differences, plus end-to-end
//! training behavior on separable synthetic data.

mod common;

use common::blob_dataset;
use ndarray::Array2;
use profed::nn::{
    adam_step, evaluate, init_mlp, loss_and_grad, loss_and_grad_into, AdamState, Hyperparams,
    ModelParams,
};
use profed::seed;
use rand::Rng;

/// Central-difference gradient, one coordinate at a time.
fn numeric_grad(
    params: &ModelParams,
    x: &Array2<f64>,
    labels: &[usize],
    weight_decay: f64,
    eps: f64,
) -> Vec<f64> {
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let mut shifted = params.clone();
        shifted.values_mut()[i] += eps;
        let (plus, _) = loss_and_grad(&shifted, x.view(), labels, weight_decay).unwrap();
        shifted.values_mut()[i] = params.values()[i] - eps;
        let (minus, _) = loss_and_grad(&shifted, x.view(), labels, weight_decay).unwrap();
        grad.push((plus - minus) / (2.0 * eps));
    }
    grad
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let shape = (5, 4, 3);
    let mut worst = 0.0_f64;
    for net in 0..20 {
        let mut rng = seed::rng(900 + net);
        let params = init_mlp(shape.0, shape.1, shape.2, 1000 + net).unwrap();
        let x = Array2::from_shape_fn((6, shape.0), |_| rng.random_range(0.0..1.0));
        let labels: Vec<usize> = (0..6).map(|_| rng.random_range(0..shape.2)).collect();
        let weight_decay = if net % 2 == 0 { 0.0 } else { 0.1 };

        let (_, analytic) = loss_and_grad(&params, x.view(), &labels, weight_decay).unwrap();
        let numeric = numeric_grad(&params, &x, &labels, weight_decay, 1e-5);
        for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            assert!(
                rel < 1e-6,
                "net {net} coordinate {i}: analytic {a} vs numeric {n} (rel {rel:.3e})"
            );
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-6);
}

#[test]
fn gradient_check_covers_bias_and_weight_blocks() {
    // Zero input forces W1's gradient through weight decay only, so the L2
    // path is checked in isolation from the data term. The hidden biases are
    // nudged positive to keep the pre-activations off the ReLU kink, where
    // central differences are meaningless.
    let mut params = init_mlp(3, 2, 2, 7).unwrap();
    params.values_mut()[6] = 0.013;
    params.values_mut()[7] = 0.017;
    let x = Array2::zeros((4, 3));
    let labels = vec![0, 1, 0, 1];
    let (_, analytic) = loss_and_grad(&params, x.view(), &labels, 0.05).unwrap();
    let numeric = numeric_grad(&params, &x, &labels, 0.05, 1e-5);
    for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        assert!(rel < 1e-6, "coordinate {i}: {a} vs {n}");
    }
    for i in 0..6 {
        assert!((analytic[i] - 0.05 * params.values()[i]).abs() < 1e-12);
    }
}

#[test]
fn adam_training_fits_separable_blobs() {
    let data = blob_dataset(40, 3, 6, 11);
    let mut params = init_mlp(6, 16, 3, 12).unwrap();
    let mut state = AdamState::new(params.len());
    let hyper = Hyperparams {
        learning_rate: 0.01,
        ..Hyperparams::default()
    };
    let x = data.features().to_owned();
    let labels = data.labels().to_vec();
    let mut grad = vec![0.0; params.len()];

    let first = loss_and_grad_into(&params, x.view(), &labels, 0.0, &mut grad).unwrap();
    let mut last = first;
    for _ in 0..150 {
        last = loss_and_grad_into(&params, x.view(), &labels, 0.0, &mut grad).unwrap();
        adam_step(&mut params, &mut state, &grad, &hyper).unwrap();
    }
    assert!(
        last < 0.5 * first,
        "loss did not halve: {first} -> {last}"
    );
    let (accuracy, _) = evaluate(&params, &data).unwrap();
    assert!(accuracy > 0.95, "train accuracy {accuracy}");
}

#[test]
fn two_class_separable_set_is_fit_in_two_hundred_steps() {
    let data = blob_dataset(50, 2, 4, 31);
    let mut params = init_mlp(4, 16, 2, 32).unwrap();
    let mut state = AdamState::new(params.len());
    let hyper = Hyperparams {
        learning_rate: 0.01,
        ..Hyperparams::default()
    };
    let x = data.features().to_owned();
    let labels = data.labels().to_vec();
    let mut grad = vec![0.0; params.len()];
    for _ in 0..200 {
        loss_and_grad_into(&params, x.view(), &labels, 0.0, &mut grad).unwrap();
        adam_step(&mut params, &mut state, &grad, &hyper).unwrap();
    }
    let (accuracy, _) = evaluate(&params, &data).unwrap();
    assert!(accuracy >= 0.99, "train accuracy {accuracy}");
}

#[test]
fn evaluation_chunking_matches_single_pass() {
    // 1300 samples cross the internal evaluation block size, so this catches
    // any chunk-boundary mistakes in accuracy or loss accumulation.
    let data = blob_dataset(325, 4, 5, 21);
    let params = init_mlp(5, 8, 4, 22).unwrap();
    let (accuracy, loss) = evaluate(&params, &data).unwrap();

    let mut hits = 0usize;
    let mut loss_sum = 0.0;
    for start in (0..data.len()).step_by(512) {
        let stop = (start + 512).min(data.len());
        let idx: Vec<usize> = (start..stop).collect();
        let block = data.subset(&idx).unwrap();
        let (block_acc, block_loss) = evaluate(&params, &block).unwrap();
        hits += (block_acc * block.len() as f64).round() as usize;
        loss_sum += block_loss * block.len() as f64;
    }
    assert_eq!((accuracy * data.len() as f64).round() as usize, hits);
    assert!((loss - loss_sum / data.len() as f64).abs() < 1e-9);
}
