//! Reproducible random streams.
//!
//! A stream is a `(seed, stream id)` pair mapped onto ChaCha8's native
//! 64-bit stream counter. Children are derived by mixing the parent id with
//! a label, so a replica's particle `i` always draws the same increments no
//! matter how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic seed derived from `base` and a label.
pub fn derive_seed(base: u64, label: u64) -> u64 {
    splitmix64(base ^ splitmix64(label ^ 0xD1B5_4A32_D192_ED03))
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream { seed, stream }
    }

    pub fn root(seed: u64) -> Self {
        RngStream::new(seed, 0)
    }

    /// Independent sub-stream identified by `label`.
    pub fn child(&self, label: u64) -> RngStream {
        RngStream {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(label.wrapping_add(0x5851_F42D_4C95_7F2D))),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.stream);
        r
    }
}

/// One generator per particle; particle `i` of a replica always reads
/// stream `child(i)`.
#[derive(Debug, Clone)]
pub struct ParticleNoise {
    rngs: Vec<ChaCha8Rng>,
}

impl ParticleNoise {
    pub fn new(stream: RngStream, n: usize) -> Self {
        ParticleNoise {
            rngs: (0..n as u64).map(|i| stream.child(i).rng()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rngs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rngs.is_empty()
    }

    pub(crate) fn generators_mut(&mut self) -> &mut [ChaCha8Rng] {
        &mut self.rngs
    }

    /// Fills `out` with standard normals from particle `i`'s generator.
    pub fn normals(&mut self, i: usize, out: &mut [f64]) {
        let rng = &mut self.rngs[i];
        for o in out {
            *o = StandardNormal.sample(rng);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn same_stream_same_draws() {
        let s = RngStream::new(42, 7).child(3);
        assert_eq!(s.rng().next_u64(), s.rng().next_u64());
    }

    #[test]
    fn children_differ() {
        let s = RngStream::root(1);
        let a: Vec<u64> = (0..64).map(|i| s.child(i).rng().next_u64()).collect();
        let mut b = a.clone();
        b.sort_unstable();
        b.dedup();
        assert_eq!(b.len(), a.len());
        assert_ne!(s.child(0).rng().next_u64(), RngStream::root(2).child(0).rng().next_u64());
    }

    #[test]
    fn child_streams_are_uncorrelated() {
        let s = RngStream::root(9);
        let mut na = ParticleNoise::new(s, 2);
        let n = 20_000;
        let mut acc = 0.0;
        let mut z = [0.0; 1];
        let mut w = [0.0; 1];
        for _ in 0..n {
            na.normals(0, &mut z);
            na.normals(1, &mut w);
            acc += z[0] * w[0];
        }
        let corr = acc / n as f64;
        assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "corr {corr}");
    }
}
