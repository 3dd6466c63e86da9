//! Counter-based random stream families.
//!
//! A [`StreamFamily`] is a 256-bit ChaCha key derived from a master seed and a
//! label path. Stream `i` of a family is the ChaCha8 generator keyed by the
//! family key with its 64-bit stream id set to `i`. Key derivation:
//!
//! ```text
//! key(master, label)        = splitmix64 expansion of master ^ fnv1a64(label)
//! key(parent.child(label))  = splitmix64 expansion of fold(parent.key) ^ fnv1a64(label)
//! ```
//!
//! Work item `i` of any batch always draws from stream `i`, so batch results
//! do not depend on how items are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamFamily {
    key: [u8; 32],
}

impl StreamFamily {
    pub fn new(master: u64, label: &str) -> Self {
        Self {
            key: expand(master ^ fnv1a64(label.as_bytes())),
        }
    }

    pub fn child(&self, label: &str) -> Self {
        let folded = self
            .key
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .fold(0u64, |acc, w| splitmix64(acc ^ w));
        Self {
            key: expand(folded ^ fnv1a64(label.as_bytes())),
        }
    }

    /// Child family keyed by an integer index (e.g. a seed replicate).
    pub fn indexed(&self, label: &str, index: u64) -> Self {
        self.child(&format!("{label}#{index}"))
    }

    pub fn stream(&self, index: u64) -> Stream {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(index);
        rng
    }

    /// A 64-bit seed summarising this family, used in manifests and as the
    /// training seed of derived runs.
    pub fn seed(&self) -> u64 {
        self.key[..8]
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, b)| acc | (u64::from(*b) << (8 * i)))
    }
}

/// Seed for subtask `index` under `label`, derived from `master`.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    StreamFamily::new(master, label)
        .indexed("seed", index)
        .seed()
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

fn expand(seed: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    let mut state = seed;
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    key
}
