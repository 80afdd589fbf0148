//! Mixture-of-Experts Graph Transformer for signal/background classification
//! of particle-collision event graphs.

pub mod data;
pub mod explain;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod training;

/// The single RNG type threaded through every stochastic operation.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
