//! Shared fixtures for the benchmarks.

use ovanet_core::{init_model, Matrix, ModelParams, ModelSpec, Rng};

pub fn bench_spec(num_known_classes: usize) -> ModelSpec {
    ModelSpec {
        input_dim: 8,
        hidden_dims: vec![64],
        feature_dim: 32,
        num_known_classes,
        init_scale: 1.0,
    }
}

pub fn random_batch(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = Rng::new(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).expect("finite draws")
}

pub fn random_params(spec: &ModelSpec, seed: u64) -> ModelParams {
    let mut rng = Rng::new(seed);
    let mut p = init_model(spec, &mut rng).expect("valid spec");
    for (_, s) in p.slices_mut() {
        for v in s {
            *v = rng.uniform(-0.3, 0.3);
        }
    }
    p
}
