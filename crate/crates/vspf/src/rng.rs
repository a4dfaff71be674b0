//! Counter-based deterministic random streams.
//!
//! Every stochastic component of the toolkit draws from stateless hashes of
//! `(seed, counter)` pairs, so results are reproducible bit-for-bit no matter
//! how work is scheduled across threads.

/// SplitMix64 finalizer. Bijective on u64, good avalanche behaviour.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a stream tag.
#[inline]
pub fn mix(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag.wrapping_mul(0xA076_1D64_78BD_642F)))
}

/// Uniform f64 in [0, 1) keyed by (seed, counter).
#[inline]
pub fn unit_f64(seed: u64, counter: u64) -> f64 {
    let bits = splitmix64(seed ^ splitmix64(counter.wrapping_add(0x632B_E59B_D9B4_E019)));
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
