//! Deterministic seeding. Every random stream in the crate is a ChaCha8
//! generator keyed by a root seed and a stream label, so components never
//! share state and results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named random streams split off a root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Noise,
    Features,
    InitialConditions,
    TestInitialConditions,
    Coefficients,
    Split,
    Lipschitz,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Noise => 0x6e6f697365,
            Stream::Features => 0x6665617475726573,
            Stream::InitialConditions => 0x6963,
            Stream::TestInitialConditions => 0x74657374_6963,
            Stream::Coefficients => 0x636f6566,
            Stream::Split => 0x73706c6974,
            Stream::Lipschitz => 0x6c6970,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `root`, a stream and an index within the stream.
pub fn derive_seed(root: u64, stream: Stream, index: u64) -> u64 {
    splitmix(splitmix(root ^ stream.tag()).wrapping_add(index))
}

pub fn rng_for(root: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, stream, index))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
