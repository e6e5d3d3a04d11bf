//! Seed-stream derivation so every random decision in a run draws from its
//! own deterministic generator.

/// SplitMix64 finalizer over `seed + tag`; tags keep streams independent.
pub fn mix(seed: u64, tag: u64) -> u64 {
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub const TAG_DATA_MEANS: u64 = 1;
pub const TAG_DATA_TRAIN: u64 = 2;
pub const TAG_DATA_TEST: u64 = 3;
pub const TAG_PARTITION: u64 = 4;
pub const TAG_MODEL_INIT: u64 = 5;
pub const TAG_WORKER_TRAIN: u64 = 6;
pub const TAG_JITTER: u64 = 7;
pub const TAG_PRUNE_ORDER: u64 = 8;
pub const TAG_PRUNE_ROUND: u64 = 9;

/// Per-worker training stream.
pub fn worker_seed(master: u64, worker: usize) -> u64 {
    mix(mix(master, TAG_WORKER_TRAIN), worker as u64)
}
