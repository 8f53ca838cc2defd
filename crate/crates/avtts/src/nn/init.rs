//! Deterministic parameter initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Uniform in +-sqrt(6 / (fan_in + fan_out)), for weight matrices.
    Xavier,
    /// All zeros, for biases.
    Zeros,
    /// N(0, 1/sqrt(H)) where H is the last extent, for embedding tables.
    Embedding,
    /// All ones, for layer-norm gains.
    Ones,
}

/// Deterministic per (shape, scheme, seed).
pub fn init(shape: &[usize], scheme: InitScheme, seed: u64) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    match scheme {
        InitScheme::Zeros => Tensor::zeros(shape),
        InitScheme::Ones => Tensor::full(shape, 1.0),
        InitScheme::Xavier => {
            let (fan_in, fan_out) = match shape {
                [i, o] => (*i, *o),
                [o] => (*o, *o),
                _ => {
                    let last = *shape.last().unwrap();
                    (n / last, last)
                }
            };
            let bound = (6.0 / (fan_in + fan_out) as f32).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Tensor::new(
                shape.to_vec(),
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
            )
        }
        InitScheme::Embedding => {
            let h = *shape.last().unwrap();
            let std = 1.0 / (h as f32).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Tensor::new(
                shape.to_vec(),
                (0..n).map(|_| gaussian(&mut rng) * std).collect(),
            )
        }
    }
}

/// Box-Muller standard normal.
fn gaussian(rng: &mut ChaCha8Rng) -> f32 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
}
