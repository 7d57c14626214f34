//! Named random streams derived from one experiment seed.
//!
//! Every consumer of randomness gets its own ChaCha stream keyed by
//! `(seed, purpose)` and selected by `(round, client)`, so the order in which
//! streams are created or consumed never affects the values they yield.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Selection = 1,
    Partition = 2,
    Wireless = 3,
    Batching = 4,
}

/// Stream for `purpose` in `round`; `slot` distinguishes clients (use 0 when
/// the stream is shared by the whole round).
pub fn stream(seed: u64, purpose: Purpose, round: u32, slot: u32) -> Stream {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream((u64::from(round) << 32) | u64::from(slot));
    rng
}
