//! Deterministic random substreams.
//!
//! Every consumer of randomness derives its generator from a user seed, a
//! domain tag, and an index (batch, replicate, ...), so results do not depend
//! on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Monte-Carlo draw batches of the pair engine.
pub const DOMAIN_PAIR_MC: u64 = 1;
/// Population generation in simulations.
pub const DOMAIN_POPULATION: u64 = 2;
/// Treatment assignment draws in simulations.
pub const DOMAIN_ASSIGNMENT: u64 = 3;
/// Per-replicate Monte-Carlo seeds in simulations.
pub const DOMAIN_REP_MC: u64 = 4;

/// Independent generator for `(seed, domain, index)`.
pub fn substream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    key[16..24].copy_from_slice(&0x5eb5_17e5_u64.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// A derived 64-bit seed, for handing to components that take a plain seed.
pub fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    use rand::RngCore;
    substream(seed, domain, index).next_u64()
}
