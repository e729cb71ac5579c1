//! Named, seed-derived random streams.
//!
//! Every stochastic component draws from its own ChaCha stream whose seed is
//! a stable hash of the global seed, a stream name and a step index. Streams
//! are therefore independent of call order, which keeps runs byte-identical
//! even if per-source work is reordered or parallelized.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit seed for the stream `(seed, name, step)`.
pub fn stream_seed(seed: u64, name: &str, step: u64) -> u64 {
    let h = splitmix64(seed ^ fnv1a(name.as_bytes()));
    splitmix64(h ^ splitmix64(step))
}

/// Random stream for one named component at one simulation step.
pub fn stream(seed: u64, name: &str, step: u64) -> SimRng {
    SimRng::seed_from_u64(stream_seed(seed, name, step))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, "bs2-rf", 3).random();
        let b: u64 = stream(7, "bs2-rf", 3).random();
        let c: u64 = stream(7, "bs2-rf", 4).random();
        let d: u64 = stream(7, "bs1-lidar", 3).random();
        let e: u64 = stream(8, "bs2-rf", 3).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert_ne!(a, e);
    }

    #[test]
    fn seed_hash_is_stable() {
        // Frozen: changing the derivation silently changes every exported trace.
        assert_eq!(fnv1a(b""), FNV_OFFSET);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }
}
