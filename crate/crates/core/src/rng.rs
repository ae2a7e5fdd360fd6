//! Seed derivation.
//!
//! Every stochastic operation draws from its own ChaCha8 stream keyed by
//! `(global seed, purpose tag, parts...)`, so per-sample draws do not depend
//! on iteration order or on how many other samples were processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over the tag bytes; the tag only needs to be stable, not strong.
fn tag_hash(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn derive_seed(seed: u64, tag: &str, parts: &[u64]) -> u64 {
    let mut h = mix(seed ^ mix(tag_hash(tag)));
    for &p in parts {
        h = mix(h ^ mix(p.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    h
}

pub fn stream(seed: u64, tag: &str, parts: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, parts))
}
