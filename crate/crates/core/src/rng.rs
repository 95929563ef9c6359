use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type Rng = ChaCha8Rng;

/// Seed for every random draw in the crate. ChaCha keeps streams identical
/// across platforms, so a seed pins a run bit for bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent generator for sub-stream `stream` of this seed.
    pub fn stream(self, stream: u64) -> Rng {
        let mut rng = self.rng();
        rng.set_stream(stream);
        rng
    }

    /// Derived seed for nested components (per iteration, per twin, ...).
    pub fn derive(self, tag: u64) -> RngSeed {
        // splitmix64 finaliser over (seed, tag)
        let mut z = self
            .0
            .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
            .wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }
}

impl From<u64> for RngSeed {
    fn from(v: u64) -> Self {
        RngSeed(v)
    }
}
