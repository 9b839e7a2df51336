//! Per-particle noise streams split from one master seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Stream ids at or above this value are reserved for initial-position sampling.
const SAMPLING_STREAMS: u64 = 1 << 63;

/// Reproducible generator for one particle: the ChaCha key comes from the
/// master seed and the stream id from the particle index, so streams never
/// overlap and do not depend on scheduling.
#[derive(Clone, Debug)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(master_seed: u64, particle_index: u64) -> Self {
        Self::with_stream(master_seed, particle_index & (SAMPLING_STREAMS - 1))
    }

    /// Stream used to draw the initial position of a particle.
    pub fn sampling(master_seed: u64, particle_index: u64) -> Self {
        Self::with_stream(master_seed, particle_index | SAMPLING_STREAMS)
    }

    fn with_stream(master_seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream);
        Self { rng }
    }

    /// Independent standard normals `(ξ^x, ξ^y)`.
    pub fn normal_pair(&mut self) -> [f64; 2] {
        [self.rng.sample(StandardNormal), self.rng.sample(StandardNormal)]
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random()
    }
}
