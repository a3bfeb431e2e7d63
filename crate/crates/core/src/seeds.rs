//! Named sub-stream seeding.
//!
//! Every source of randomness in a run is a ChaCha12 generator seeded from the
//! master seed plus a stream label (and an optional index, e.g. the epoch for
//! batch shuffling). Streams are independent by label, so consuming one stream
//! (say teacher init) never perturbs another (student init), which is what the
//! method-equivalence guarantees rely on.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stream labels used by the trainer. Free-form labels are allowed; these
/// constants are the ones a full run consumes.
pub mod stream {
    pub const STUDENT_INIT: &str = "init/student";
    pub const TEACHER_INIT: &str = "init/teacher";
    pub const SHUFFLE: &str = "shuffle";
    pub const EXPLORE: &str = "explore";
    pub const SYNTH: &str = "synth";
    pub const SPLIT: &str = "split";
}

/// Derives a child seed from `(master, label, index)`.
///
/// FNV-1a over the label bytes, mixed with the master seed and index through
/// splitmix64 finalizers. Stable across platforms and releases; the exact
/// constants are part of the reproducibility contract.
pub fn child_seed(master: u64, label: &str, index: u64) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(splitmix64(master ^ h).wrapping_add(index))
}

/// A seeded generator for the given stream.
pub fn stream_rng(master: u64, label: &str, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(child_seed(master, label, index))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
