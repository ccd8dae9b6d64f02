//! Deterministic inputs for the benchmarks.

use memtrack::reader::{stack_memory, StackedMemory};
use memtrack::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Desk-model feature shape: 32 channels on a 37 x 37 grid.
pub const DESK_SHAPE: [usize; 3] = [32, 37, 37];

/// Uniform `[-1, 1)` tensor of `shape` from `seed`.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// `t` random memory frames of `shape`, stacked, and a query.
pub fn memory_and_query(shape: [usize; 3], t: usize) -> (StackedMemory<f32>, Tensor<f32>) {
    let frames: Vec<Tensor<f32>> = (0..t).map(|i| random_tensor(&shape, i as u64 + 1)).collect();
    let refs: Vec<_> = frames.iter().enumerate().map(|(i, f)| (f, i + 1)).collect();
    let mem = stack_memory(&refs).expect("equal shapes");
    (mem, random_tensor(&shape, 0))
}
