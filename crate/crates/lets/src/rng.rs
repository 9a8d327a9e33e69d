//! Deterministic random-number streams for reproducible experiments.
//!
//! Experiments split a master seed into independent child streams by path
//! (replicate index, purpose, member index, ...) instead of drawing from one
//! shared generator, so a run is bit-reproducible regardless of evaluation
//! order. Derivation is counter-based: each `child(i)` mixes the index into
//! the parent key with the SplitMix64 finalizer, and `rng()` expands the key
//! into a full ChaCha12 seed. ChaCha12 is used because its output is identical
//! across platforms and rustc versions.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// SplitMix64 finalizer: a cheap, well-mixed bijection on `u64`.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Node of a deterministic seed tree.
///
/// `SeedTree::new(master).child(a).child(b).rng()` always yields the same
/// generator, and different paths yield unrelated streams.
#[derive(Clone, Copy, Debug)]
pub struct SeedTree {
    key: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        // Offset so that master 0 does not map to the all-zero key.
        SeedTree { key: mix(master ^ 0x6c62_272e_07bb_0142) }
    }

    /// Derive the `idx`-th child stream.
    pub fn child(&self, idx: u64) -> SeedTree {
        SeedTree { key: mix(self.key ^ mix(idx.wrapping_add(0x9e37_79b9))) }
    }

    /// The node's derived key, for labelling runs with the stream that
    /// produced them.
    pub fn key(&self) -> u64 {
        self.key
    }

    /// Instantiate the generator for this node.
    pub fn rng(&self) -> ChaCha12Rng {
        let mut seed = [0u8; 32];
        let mut k = self.key;
        for word in seed.chunks_exact_mut(8) {
            k = mix(k);
            word.copy_from_slice(&k.to_le_bytes());
        }
        ChaCha12Rng::from_seed(seed)
    }
}
