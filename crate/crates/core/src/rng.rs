//! Deterministic random-number substreams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit key of a curve identifier.
pub fn curve_key(id: &str) -> u64 {
    let digest = Sha256::digest(id.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

/// Seed of chain `chain` derived from a run seed.
pub fn chain_seed(run_seed: u64, chain: u64) -> u64 {
    mix64(run_seed ^ mix64(chain.wrapping_add(0x5bd1_e995)))
}

/// Main generator of a chain, used for the population-level updates.
pub fn chain_rng(chain_seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(chain_seed)
}

/// Substream for one curve's coefficient update at one sweep.
pub fn curve_rng(chain_seed: u64, sweep: u64, curve_key: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(chain_seed ^ mix64(curve_key)));
    rng.set_stream(sweep);
    rng
}
