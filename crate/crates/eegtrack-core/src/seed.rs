//! Named seed derivation.
//!
//! All randomness in a run flows from one master seed. Every stage derives its
//! own stream with `derive_seed(master, stage_name, index)` so adding or
//! reordering stages never perturbs the draws of another stage.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a 32-byte seed from the master seed, a stage label and an index.
pub fn derive_seed(master: u64, stage: &str, index: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(stage.as_bytes());
    hasher.update(index.to_le_bytes());
    hasher.finalize().into()
}

/// Seeded RNG for one named stream.
pub fn rng_for(master: u64, stage: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(master, stage, index))
}

/// A derived sub-seed, for stages that take a plain integer seed.
pub fn derive_u64(master: u64, stage: &str, index: u64) -> u64 {
    let bytes = derive_seed(master, stage, index);
    u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
}
