//! Seeded, splittable random streams.
//!
//! Every stochastic operation takes an explicit stream derived from the
//! experiment seed, so a run is a pure function of its seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Real, Tensor};

/// A (seed, stream) pair naming one independent ChaCha counter stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedStream {
    seed: u64,
    stream: u64,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream named by a label; distinct labels give independent streams.
    pub fn split(&self, label: &str) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
        }
        Self {
            seed: self.seed,
            stream: splitmix(self.stream ^ splitmix(h)),
        }
    }

    pub fn split_index(&self, i: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix(self.stream.wrapping_add(splitmix(i ^ 0x5851_F42D_4C95_7F2D))),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.stream);
        r
    }
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> Real {
    rng.sample::<f64, _>(StandardNormal) as Real
}

pub fn normal_tensor<R: Rng + ?Sized>(shape: &[usize], std: Real, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| std * normal(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Uniform on `[lo, hi)`.
pub fn uniform_tensor<R: Rng + ?Sized>(shape: &[usize], lo: Real, hi: Real, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| lo + (hi - lo) * rng.random::<f64>() as Real)
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        p.swap(i, j);
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_stream_same_draws() {
        let s = SeedStream::new(7).split("data");
        let a: Vec<u64> = (0..4).map(|_| 0).scan(s.rng(), |r, _| Some(r.random())).collect();
        let b: Vec<u64> = (0..4).map(|_| 0).scan(s.rng(), |r, _| Some(r.random())).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn labels_give_distinct_streams() {
        let root = SeedStream::new(7);
        let x: u64 = root.split("a").rng().random();
        let y: u64 = root.split("b").rng().random();
        let z: u64 = root.split_index(0).rng().random();
        assert_ne!(x, y);
        assert_ne!(x, z);
    }
}
