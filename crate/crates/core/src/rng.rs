//! Named, hash-derived random streams.
//!
//! Every stochastic decision draws from a stream keyed by
//! `(master seed, stream name, item id)`, so results never depend on the
//! order in which items are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub const STREAM_DATA_ORDER: &str = "data-order";
pub const STREAM_AUGMENT: &str = "augment";
pub const STREAM_INIT: &str = "init";
pub const STREAM_SPLIT: &str = "split";

/// Derives an independent generator for `(master, name, item)`.
pub fn stream(master: u64, name: &str, item: u64) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update((name.len() as u64).to_le_bytes());
    hasher.update(name.as_bytes());
    hasher.update(item.to_le_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}
