//! Reproducible, partitionable random streams.
//!
//! Every stream is a ChaCha8 keystream keyed by the 64-bit seed with the
//! 64-bit stream selector set to `stream_index`, so a stream is addressable
//! without generating any of its predecessors. Monte Carlo drivers hand each
//! fixed-size chunk of samples its own stream index, which makes results
//! independent of how chunks are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_index: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_index: u64) -> Self {
        Self { seed, stream_index }
    }

    /// Stream `offset` positions further along the index axis.
    pub fn substream(&self, offset: u64) -> Self {
        Self {
            seed: self.seed,
            stream_index: self.stream_index.wrapping_add(offset),
        }
    }

    pub fn generator(&self) -> Gaussian {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_index);
        Gaussian { rng }
    }
}

/// Source of standard normal and uniform variates for one stream.
pub struct Gaussian {
    rng: ChaCha8Rng,
}

impl Gaussian {
    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        rand::Rng::random::<f64>(&mut self.rng)
    }

    pub fn fill_normal(&mut self, out: &mut [f64], scale: f64) {
        for x in out.iter_mut() {
            *x = scale * self.normal();
        }
    }
}
