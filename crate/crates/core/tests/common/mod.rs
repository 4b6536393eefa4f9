#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spsconv::conv::ConvWeights;
use spsconv::tensor::{Coord, SparseTensor};

/// Each cell of an `n^3` grid is active with probability `density`;
/// features uniform in `[-1, 1]`.
pub fn random_tensor(seed: u64, n: i32, density: f64, channels: usize) -> SparseTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::new();
    let mut features = Vec::new();
    for x in 0..n {
        for y in 0..n {
            for z in 0..n {
                if rng.gen_bool(density) {
                    coords.push(Coord::new(0, x, y, z));
                    features.extend((0..channels).map(|_| rng.gen_range(-1.0f32..=1.0)));
                }
            }
        }
    }
    SparseTensor::new(coords, features, channels, [n; 3]).unwrap()
}

pub fn random_weights(seed: u64, k: usize, c_in: usize, c_out: usize) -> ConvWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = k.pow(3) * c_in * c_out;
    ConvWeights::new(
        k,
        c_in,
        c_out,
        (0..n).map(|_| rng.gen_range(-1.0f32..=1.0)).collect(),
    )
    .unwrap()
}

/// `|a - b| <= tol * max(|b|, 1)`.
pub fn close(a: f32, b: f32, tol: f64) -> bool {
    let (a, b) = (a as f64, b as f64);
    (a - b).abs() <= tol * b.abs().max(1.0)
}
