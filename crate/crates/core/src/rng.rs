//! Named, keyed random streams.
//!
//! Every consumer of randomness derives its own `ChaCha8Rng` from the root
//! seed plus a label and a (round, client) key, so results never depend on
//! the order in which clients are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Marker for keys that do not involve a client.
pub const NO_CLIENT: usize = usize::MAX;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derives the 64-bit seed of stream `label` at `(round, client)`.
pub fn stream_seed(root: u64, label: &str, round: usize, client: usize) -> u64 {
    let mut h = splitmix64(root);
    h = splitmix64(h ^ label_hash(label));
    h = splitmix64(h ^ round as u64);
    splitmix64(h ^ client as u64)
}

pub fn stream(root: u64, label: &str, round: usize, client: usize) -> StreamRng {
    ChaCha8Rng::seed_from_u64(stream_seed(root, label, round, client))
}

pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}
