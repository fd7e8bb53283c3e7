//! Named seed substreams.
//!
//! Every random choice in a run is drawn from a ChaCha stream whose seed is
//! derived from the master seed and a path of names, so adding a new consumer
//! never shifts the draws of an existing one and results do not depend on the
//! order in which work is scheduled.

use sha2::{Digest, Sha256};

pub const CORPUS: &str = "corpus";
pub const VICTIM: &str = "victim";
pub const ATTACK: &str = "attack";
pub const DETECTOR: &str = "detector";
pub const EVAL: &str = "eval";

/// `sha256(master || 0 || part1 || 0 || part2 ...)`, first eight bytes LE.
pub fn derive(master: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for p in parts {
        h.update([0u8]);
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}
