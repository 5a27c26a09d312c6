//! Deterministic seed schedule for replicas and grid points.
//!
//! Every stream is derived as `base ^ mix(tags)`, so a replica's randomness
//! depends only on the base seed and its own coordinates, never on the
//! order in which parallel workers pick it up.

use rand_pcg::Pcg64Mcg;

/// The generator used throughout the crate.
pub type SimRng = Pcg64Mcg;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash of an ordered tuple of coordinates.
pub fn mix(tags: &[u64]) -> u64 {
    tags.iter()
        .fold(0x51_7cc1_b727_220a_u64, |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream_seed(base: u64, tags: &[u64]) -> u64 {
    base ^ mix(tags)
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    let lo = splitmix64(seed) as u128;
    let hi = splitmix64(seed ^ 0xa076_1d64_78bd_642f) as u128;
    SimRng::new((hi << 64) | lo | 1)
}

pub fn stream(base: u64, tags: &[u64]) -> SimRng {
    rng_from_seed(stream_seed(base, tags))
}

/// Stable tag for a floating point grid coordinate.
pub fn f64_tag(x: f64) -> u64 {
    x.to_bits()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngExt;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, &[1, 2]).random();
        let b: u64 = stream(7, &[1, 2]).random();
        let c: u64 = stream(7, &[2, 1]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
