//! Seeded randomness. Every random draw in the crate flows from a [`Seed`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A 64-bit seed driving a counter-based ChaCha generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Seed(pub u64);

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl Seed {
    pub fn rng(self) -> Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent child seed for stream `index`. Used to give every sample
    /// of a batch its own generator so results do not depend on scheduling.
    pub fn derive(self, index: u64) -> Seed {
        Seed(splitmix64(self.0 ^ splitmix64(index.wrapping_add(0x51_7cc1_b727_220a))))
    }

    pub fn derive2(self, a: u64, b: u64) -> Seed {
        self.derive(a).derive(b)
    }
}
