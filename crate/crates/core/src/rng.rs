//! Named random substreams.
//!
//! Every stochastic step derives its generator from the root seed and a
//! path such as `pretrain/epoch/3/img/17`, so serial and parallel runs draw
//! the same numbers regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn seed(&self, path: &str) -> u64 {
        splitmix64(self.root ^ splitmix64(fnv1a64(path.as_bytes())))
    }

    pub fn rng(&self, path: &str) -> Rng {
        Rng::seed_from_u64(self.seed(path))
    }

    /// A subtree rooted at `path`; `tree.child("a").seed("b")` differs from
    /// `tree.seed("a/b")` but is equally deterministic.
    pub fn child(&self, path: &str) -> SeedTree {
        SeedTree::new(self.seed(path))
    }
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
