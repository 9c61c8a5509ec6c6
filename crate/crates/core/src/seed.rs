//! Seed derivation and generator construction.
//!
//! Every random decision in a campaign is keyed by a path of integers
//! (master seed, iteration, worker, stream) so results never depend on
//! scheduling or on how many draws some other component consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named sub-streams so unrelated consumers of the same (t, s) never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Worker = 1,
    Random = 2,
    Basis = 3,
    ModelInit = 4,
    Fantasy = 5,
    Repetition = 6,
    Shuffle = 7,
    Library = 8,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable hash of a seed path. Identical on every platform and build.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut h = splitmix64(master);
    for &p in path {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

/// Seed for Thompson worker `s` at iteration `t`.
pub fn worker_seed(master: u64, t: u64, s: u64) -> u64 {
    derive_seed(master, &[Stream::Worker as u64, t, s])
}

pub fn stream_seed(master: u64, stream: Stream, path: &[u64]) -> u64 {
    let mut full = Vec::with_capacity(path.len() + 1);
    full.push(stream as u64);
    full.extend_from_slice(path);
    derive_seed(master, &full)
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
