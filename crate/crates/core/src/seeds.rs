//! Named, hierarchical seed derivation.
//!
//! A [`SeedStream`] is a 64-bit seed plus the ability to split off named
//! substreams. Derivation hashes the parent seed together with the name, so
//! a given `(root, name)` pair always yields the same child and distinct names
//! yield unrelated children.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Canonical substream names used across the library.
pub mod names {
    pub const ENV: &str = "env";
    pub const POLICY_INIT: &str = "policy-init";
    pub const DATA_SHUFFLE: &str = "data-shuffle";
    pub const FRAGMENT_SAMPLING: &str = "fragment-sampling";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream {
    seed: u64,
}

impl SeedStream {
    pub fn new(root_seed: u64) -> Self {
        Self { seed: root_seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives the child stream named `name`.
    ///
    /// Panics on an empty name; every call site uses a literal.
    pub fn derive(&self, name: &str) -> SeedStream {
        assert!(!name.is_empty(), "substream name must be nonempty");
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update((name.len() as u64).to_le_bytes());
        hasher.update(name.as_bytes());
        let digest = hasher.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        SeedStream {
            seed: u64::from_le_bytes(bytes),
        }
    }

    /// Shorthand for `derive` with an indexed name such as `round/3`.
    pub fn derive_indexed(&self, name: &str, index: usize) -> SeedStream {
        self.derive(&format!("{name}/{index}"))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// Free-function form of [`SeedStream::derive`].
pub fn derive_stream(seeds: &SeedStream, name: &str) -> SeedStream {
    seeds.derive(name)
}
