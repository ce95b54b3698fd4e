//! Seeded, portable random streams.
//!
//! Every source of randomness in the simulator draws from a named
//! sub-stream of the master seed, so identical configurations reproduce
//! bit-for-bit on any platform. Sub-streams are derived by mixing the
//! master seed with a purpose tag and optional salts (client id, round,
//! ...) through SplitMix64, then seeding a ChaCha8 generator, whose
//! output is stable across platforms and `rand_chacha` releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tag for a derived random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Gaussian angle noise during spiral generation.
    SpiralNoise,
    /// Partitioning a dataset across clients.
    Partition,
    /// Per-client train/test splits.
    Split,
    /// Per-client network weight initialization.
    WeightInit,
    /// Server-side initial global prototypes.
    GlobalInit,
    /// Per-round client sampling.
    ClientSample,
    /// Per-(client, round) minibatch shuffling.
    BatchShuffle,
    /// Aligner-internal randomness (zero-vector replacement, jitter).
    Align,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::SpiralNoise => 0x01,
            Stream::Partition => 0x02,
            Stream::Split => 0x03,
            Stream::WeightInit => 0x04,
            Stream::GlobalInit => 0x05,
            Stream::ClientSample => 0x06,
            Stream::BatchShuffle => 0x07,
            Stream::Align => 0x08,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Derive the seed for a sub-stream of `master_seed`.
pub fn substream_seed(master_seed: u64, stream: Stream, salts: &[u64]) -> u64 {
    let mut s = splitmix64(master_seed ^ splitmix64(stream.tag()));
    for &salt in salts {
        s = splitmix64(s ^ splitmix64(salt));
    }
    s
}

/// A seeded generator for the given purpose and salts.
pub fn substream(master_seed: u64, stream: Stream, salts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(master_seed, stream, salts))
}
