//! Latin Hypercube Sampling over the unit cube and over knob spaces.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::knobspace::{denormalize, Configuration, ConfigurationSpace};

/// n stratified points in [0,1]^dim: per dimension, each of the n
/// strata [j/n, (j+1)/n) holds exactly one coordinate.
pub fn lhs_unit<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    assert!(n >= 1);
    let mut samples = vec![vec![0.0; dim]; n];
    for d in 0..dim {
        let mut coords: Vec<f64> = (0..n)
            .map(|j| (j as f64 + rng.gen::<f64>()) / n as f64)
            .collect();
        coords.shuffle(rng);
        for (i, c) in coords.into_iter().enumerate() {
            samples[i][d] = c;
        }
    }
    samples
}

/// LHS sample of `n` configurations, deterministic per seed.
pub fn lhs_sample(space: &ConfigurationSpace, n: usize, seed: u64) -> Vec<Configuration> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lhs_unit(n, space.dimension(), &mut rng)
        .into_iter()
        .map(|v| denormalize(space, &v).expect("matching dimensions"))
        .collect()
}
