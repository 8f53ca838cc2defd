//! Counter-based RNG used for dropout masks and other per-op randomness.
//!
//! Unlike a stateful stream, every draw is a pure function of
//! (seed, counter), so a graph rebuilt for the same step produces the
//! same masks regardless of evaluation order.

/// splitmix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Combine a seed with stream identifiers into a new seed.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut s = mix64(seed ^ 0xa076_1d64_78bd_642f);
    for &p in parts {
        s = mix64(s ^ p.wrapping_mul(0xe703_7ed1_a0b4_28db));
    }
    s
}

/// Uniform in [0, 1) from (seed, counter).
#[inline]
pub fn uniform01(seed: u64, counter: u64) -> f64 {
    let bits = mix64(seed ^ mix64(counter));
    // 53 mantissa bits
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        assert_eq!(uniform01(7, 42), uniform01(7, 42));
        assert_ne!(uniform01(7, 42), uniform01(7, 43));
        assert_ne!(uniform01(7, 42), uniform01(8, 42));
    }

    #[test]
    fn in_unit_interval() {
        for c in 0..1000 {
            let u = uniform01(123, c);
            assert!((0.0..1.0).contains(&u));
        }
    }
}
