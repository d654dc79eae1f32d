//! Seeded ChaCha20 streams.
//!
//! Every random draw in the crate comes from a ChaCha20 generator whose
//! 256-bit key is `seed (LE u64) || domain tag (8 bytes) || zeros` and whose
//! 64-bit stream id selects an independent sequence under that key. ChaCha20
//! is counter based, so any (seed, domain, stream) sequence can be generated
//! without producing the ones before it. Domain tags keep, for example, weight
//! initialization seed 1 and data order seed 1 uncorrelated.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub const INIT: &[u8; 8] = b"initwgts";
pub const DATA_ORDER: &[u8; 8] = b"dataordr";
pub const RANDOM_MASK: &[u8; 8] = b"randmask";
pub const SYNTHETIC: &[u8; 8] = b"synthset";

pub fn stream(domain: &[u8; 8], seed: u64, stream: u64) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(domain);
    let mut rng = ChaCha20Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Mixes a parent seed and a label into a child seed (splitmix64 finalizer).
pub fn derive_seed(parent: u64, label: u64) -> u64 {
    let mut z = parent ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
