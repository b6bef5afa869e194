//! Named random sub-streams derived from a single seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream identifiers. Two components seeded from the same
/// global seed never share random draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Synth = 1,
    Init = 2,
    Erm = 3,
    KMeans = 4,
    Sampler = 5,
    Head = 6,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
