//! Seed derivation and the independent random streams of one run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a base seed with a path of tags (setting, topology, repetition, ...)
/// into a new 63-bit seed. Uses the splitmix64 finalizer on each step.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut h = base;
    for &t in tags {
        h = splitmix(h ^ splitmix(t.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    // toml integers are signed 64-bit
    splitmix(h) >> 1
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The random streams used by the dynamics. The scenario has its own seed.
#[derive(Debug, Clone)]
pub struct RngStreams {
    /// Bernoulli grand-coalition draws and proposer selection.
    pub controller: ChaCha8Rng,
    /// Random tie-breaking among equally good coalitions.
    pub ties: ChaCha8Rng,
    /// Power samples broadcast inside coalitions.
    pub samples: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k);
            rng
        };
        Self {
            controller: stream(1),
            ties: stream(2),
            samples: stream(3),
        }
    }
}
