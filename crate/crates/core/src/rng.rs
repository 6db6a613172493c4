//! Reproducible random number streams.
//!
//! Two kinds of randomness are used throughout the crate and both must be
//! replayable from a single `u64` master seed:
//!
//! * **Replica streams**: one independent `ChaCha8Rng` per (seed, index)
//!   pair, used by walkers and samplers. Deriving by index rather than by
//!   splitting a shared generator makes the output independent of the order
//!   in which replicas are scheduled.
//! * **Node keys**: every tree node owns a 64-bit key from which its
//!   offspring draw is computed as a pure function. Child keys are derived
//!   from the parent key and the child slot, so a lazily grown tree is a
//!   deterministic function of its seed no matter which order the walk (or
//!   several walks) touch it in.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SplitMix64 step: advances the state and returns a well-mixed output.
/// Used both as a mixer for key derivation and as the per-node generator.
#[inline]
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes two words into one key. Not invertible in any useful way; the point
/// is only that distinct (a, b) pairs land on effectively independent keys.
#[inline]
pub fn mix(a: u64, b: u64) -> u64 {
    let mut s = a ^ b.wrapping_mul(0xd6e8_feb8_6659_fd93);
    let x = splitmix64(&mut s);
    let mut s2 = x ^ a.rotate_left(23);
    splitmix64(&mut s2)
}

/// Derives the replica stream for `(master, index)`. Streams for distinct
/// indices are independent for all practical purposes, and the derivation
/// does not depend on how many other streams were created before this one.
pub fn derive_stream(master: u64, index: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    let mut s = mix(master, index);
    for chunk in seed.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Key for the root of a lazily grown tree, namespaced by a tag so that
/// several trees (or the ray stream of a rayed tree) can share one seed.
pub fn root_key(seed: u64, tag: u64) -> u64 {
    mix(seed, tag)
}

/// Key of the `slot`-th child of a node with key `parent`.
#[inline]
pub fn child_key(parent: u64, slot: u32) -> u64 {
    mix(parent, 0x5851_f42d_4c95_7f2d ^ u64::from(slot))
}

/// Small generator seeded from a node key. One node only ever consumes a
/// handful of values (an atom choice, sometimes a survivor assignment), so a
/// SplitMix64 sequence is plenty and costs nothing to construct.
#[derive(Clone, Debug)]
pub struct KeyedRng {
    state: u64,
}

impl KeyedRng {
    pub fn new(key: u64) -> Self {
        // Decorrelate the first output from the raw key.
        let mut state = key;
        let _ = splitmix64(&mut state);
        KeyedRng { state }
    }
}

impl RngCore for KeyedRng {
    fn next_u32(&mut self) -> u32 {
        (splitmix64(&mut self.state) >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        splitmix64(&mut self.state)
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        let mut chunks = dest.chunks_exact_mut(8);
        for chunk in &mut chunks {
            chunk.copy_from_slice(&self.next_u64().to_le_bytes());
        }
        let rem = chunks.into_remainder();
        if !rem.is_empty() {
            let bytes = self.next_u64().to_le_bytes();
            rem.copy_from_slice(&bytes[..rem.len()]);
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}
