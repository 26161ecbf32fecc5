//! Seeded random streams.
//!
//! Every random object in the crate is drawn from a `ChaCha8Rng` whose seed is
//! derived from a master seed and a list of integer labels, so results do not
//! depend on evaluation order or thread scheduling.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a sequence of labels into a new 64-bit seed.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(splitmix64(seed), |acc, &label| {
        splitmix64(acc ^ splitmix64(label))
    })
}

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn substream(seed: u64, labels: &[u64]) -> StreamRng {
    stream(derive_seed(seed, labels))
}

pub fn gaussian_matrix(rows: usize, cols: usize, sigma: f64, rng: &mut StreamRng) -> DMatrix<f64> {
    // column-major fill; fixed order keeps matrices bit-identical per seed
    DMatrix::from_fn(rows, cols, |_, _| {
        let g: f64 = StandardNormal.sample(rng);
        sigma * g
    })
}

pub fn gaussian_vector(len: usize, rng: &mut StreamRng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| StandardNormal.sample(rng))
}

/// Uniform direction on the unit sphere of `R^len`.
pub fn unit_vector(len: usize, rng: &mut StreamRng) -> DVector<f64> {
    loop {
        let g = gaussian_vector(len, rng);
        let norm = g.norm();
        if norm > 1e-12 {
            return g / norm;
        }
    }
}
