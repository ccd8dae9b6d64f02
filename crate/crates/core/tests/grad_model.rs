//! End-to-end gradient check of the tiny model plus loss, and a check that
//! the oracle notices a slightly wrong backward.

use memtrack::model::ModelConfig;
use memtrack::tensor::Function;
use memtrack::tensor::{grad_check, Tensor};
use memtrack::train::model_gradient_check;

#[test]
fn tiny_model_gradients_match_central_differences() {
    for seed in [1, 5] {
        let r = model_gradient_check(&ModelConfig::tiny(), seed, 2).unwrap();
        assert!(r.max_relative_error < 1e-4, "seed {seed}: {r:?}");
        assert!(r.checked > 1000);
    }
}

#[test]
fn three_frame_tiny_model() {
    let r = model_gradient_check(&ModelConfig::tiny(), 2, 3).unwrap();
    assert!(r.max_relative_error < 1e-4, "{r:?}");
}

/// Square with a backward that is off by one percent.
struct SkewedSquare;

impl Function<f64> for SkewedSquare {
    fn name(&self) -> &'static str {
        "skewed_square"
    }
    fn backward(&self, inputs: &[&Tensor<f64>], _: &Tensor<f64>, grad: &Tensor<f64>) -> Vec<Option<Vec<f64>>> {
        let d = inputs[0].data().iter().zip(grad.data()).map(|(x, g)| 2.02 * x * g).collect();
        vec![Some(d)]
    }
}

#[test]
fn oracle_flags_a_one_percent_gradient_error() {
    let x = Tensor::new(&[3], vec![0.3, -1.2, 2.0]).unwrap();
    let r = grad_check(
        |g, v| {
            let value = g.value(v[0]).map(|a| a * a);
            let y = g.custom(&[v[0]], value, Box::new(SkewedSquare));
            Ok(g.sum(y))
        },
        &[x],
        1e-5,
    )
    .unwrap();
    assert!(r.max_relative_error > 5e-3, "{r:?}");
}
