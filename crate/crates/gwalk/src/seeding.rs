//! Deterministic stream splitting for reproducible parallel simulation.
//!
//! Every random draw in this crate flows from a [`StreamKey`], a 128-bit
//! label that can be split into independent child labels. Keys are pure
//! functions of the master seed and a derivation path (replicate index,
//! vertex position, purpose tag), so any quantity is reproducible
//! bit-for-bit regardless of evaluation order or worker-thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Well-separated tags for the independent sub-streams of one replicate.
pub mod tags {
    /// Environment marks (offspring counts and displacements).
    pub const ENV: u64 = 0x454e_5649_524f;
    /// Walker step decisions.
    pub const WALK: u64 = 0x5741_4c4b;
    /// Range-sampler offspring draws.
    pub const RANGE: u64 = 0x5241_4e47_45;
    /// Spine-walk steps.
    pub const SPINE: u64 = 0x5350_494e_45;
    /// Bootstrap resampling.
    pub const BOOT: u64 = 0x424f_4f54;
}

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// A 128-bit point in the derivation tree of random streams.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct StreamKey {
    hi: u64,
    lo: u64,
}

impl StreamKey {
    /// Key at the root of the derivation tree for a master seed.
    pub fn root(seed: u64) -> Self {
        StreamKey {
            hi: splitmix64(seed ^ 0x1f83_d9ab_fb41_bd6b),
            lo: splitmix64(seed),
        }
    }

    /// Child key for a branch index (vertex child slot, replicate id,
    /// purpose tag). Distinct indices give decorrelated keys.
    #[inline]
    pub fn child(self, index: u64) -> Self {
        let a = splitmix64(self.lo ^ splitmix64(index.wrapping_add(1)));
        let b = splitmix64(self.hi ^ a.rotate_left(32) ^ 0xd1b5_4a32_d192_ed03);
        StreamKey { hi: b, lo: a }
    }

    /// A ChaCha generator dedicated to this key. Constructing the same
    /// key twice yields identical draw sequences.
    pub fn rng(self) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        seed[0..8].copy_from_slice(&self.lo.to_le_bytes());
        seed[8..16].copy_from_slice(&self.hi.to_le_bytes());
        seed[16..24].copy_from_slice(&(self.lo ^ 0x243f_6a88_85a3_08d3).to_le_bytes());
        seed[24..32].copy_from_slice(&(self.hi ^ 0x1319_8a2e_0370_7344).to_le_bytes());
        ChaCha8Rng::from_seed(seed)
    }
}

/// Replicates per parallel chunk. Large enough to amortize scheduling,
/// small enough to balance load across workers.
pub const CHUNK_REPLICATES: u64 = 4096;

/// Runs `per_chunk` over replicate index ranges in parallel and returns the
/// per-chunk outputs in chunk order. Chunk `c` derives its randomness from
/// `key.child(c)`, so the result is independent of worker count and
/// scheduling.
pub fn par_chunk_map<T, F>(replicates: u64, key: StreamKey, per_chunk: F) -> Vec<T>
where
    T: Send,
    F: Fn(StreamKey, std::ops::Range<u64>) -> T + Sync,
{
    let n_chunks = replicates.div_ceil(CHUNK_REPLICATES);
    (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK_REPLICATES;
            let hi = (lo + CHUNK_REPLICATES).min(replicates);
            per_chunk(key.child(c), lo..hi)
        })
        .collect()
}
