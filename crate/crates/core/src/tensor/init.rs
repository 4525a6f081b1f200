use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Scalar, Tensor};

/// Stable 64-bit FNV-1a of a parameter name, mixed with the model seed.
///
/// Each parameter draws from its own stream, so adding or removing a layer
/// leaves every other layer's initial values untouched.
pub fn name_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Zero-mean normal values with standard deviation `sqrt(2 / fan_in)`.
pub fn he_normal<T: Scalar>(shape: &[usize], fan_in: usize, seed: u64, name: &str) -> Tensor<T> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, name));
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        T::from_f64(z * std)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn he_normal_is_seeded_per_name() {
        let a: Tensor<f64> = he_normal(&[4, 4, 3, 3], 36, 1, "w");
        let b: Tensor<f64> = he_normal(&[4, 4, 3, 3], 36, 1, "w");
        let c: Tensor<f64> = he_normal(&[4, 4, 3, 3], 36, 1, "v");
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn he_normal_scale() {
        let t: Tensor<f64> = he_normal(&[20000], 50, 3, "x");
        let n = t.numel() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01);
        assert!((var - 2.0 / 50.0).abs() < 0.004);
    }
}
