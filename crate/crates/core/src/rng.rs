//! Seeded random sub-streams.
//!
//! Every random decision flows from one seed. Each consumer draws from its
//! own ChaCha stream so that, for example, verification coins can be
//! replayed without disturbing draft sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Draft-token sampling.
    Draft,
    /// Verification coins `r_i` and correction/bonus sampling.
    Verify,
    /// Training-set shuffling and minibatch order.
    Shuffle,
    /// Weight initialization.
    Init,
    /// Prompt selection and synthetic data.
    Data,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Draft => 1,
            Stream::Verify => 2,
            Stream::Shuffle => 3,
            Stream::Init => 4,
            Stream::Data => 5,
        }
    }
}

/// Returns the named sub-stream of `seed`.
pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}

/// Derives an independent seed for item `index` (e.g. one prompt of a batch).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random sources for one decoding session.
#[derive(Debug, Clone)]
pub struct SessionRng {
    pub draft: ChaCha8Rng,
    pub verify: ChaCha8Rng,
}

impl SessionRng {
    pub fn new(seed: u64) -> Self {
        Self { draft: stream(seed, Stream::Draft), verify: stream(seed, Stream::Verify) }
    }
}
