//! Deterministic derivation of named RNG sub-streams from one base seed.
//!
//! Every source of randomness in the crate (weight init, hyperopt proposals,
//! candidate sampling, data splits) takes a seed derived here, so one
//! top-level seed reproduces an entire run bit for bit.

/// Derive a sub-stream seed from a base seed and a stream name.
///
/// Stable across runs and platforms: FNV-1a over the name, mixed with the
/// base seed through splitmix64.
pub fn derive_seed(base: u64, stream: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(base ^ h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_inputs_same_seed() {
        assert_eq!(derive_seed(42, "init"), derive_seed(42, "init"));
    }

    #[test]
    fn streams_are_distinct() {
        assert_ne!(derive_seed(42, "init"), derive_seed(42, "hyperopt"));
        assert_ne!(derive_seed(42, "init"), derive_seed(43, "init"));
    }
}
