//! Seeded random streams.
//!
//! All randomness in a scenario flows from one root seed through named
//! streams ("data", "partition", "init", "election", "noise"), so a code
//! change that consumes more randomness in one subsystem leaves the others
//! untouched.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Root seed names. Sub-streams are derived by appending `/`-separated
/// path segments, e.g. `data/train/2/5/13`.
pub const STREAM_DATA: &str = "data";
pub const STREAM_PARTITION: &str = "partition";
pub const STREAM_INIT: &str = "init";
pub const STREAM_ELECTION: &str = "election";
pub const STREAM_NOISE: &str = "noise";

/// Derive a 32-byte seed from the root seed and a stream name.
pub fn derive_seed(root: u64, name: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update([0x1f]);
    hasher.update(name.as_bytes());
    hasher.finalize().into()
}

/// Deterministic RNG for the named stream.
pub fn stream(root: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(root, name))
}

/// Deterministic RNG for a sub-stream, keyed by path segments.
pub fn substream(root: u64, name: &str, path: &[u64]) -> ChaCha8Rng {
    let mut full = String::from(name);
    for p in path {
        full.push('/');
        full.push_str(&p.to_string());
    }
    stream(root, &full)
}
