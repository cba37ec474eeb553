//! Deterministic seed derivation for independent substreams.

/// SplitMix64 step; good avalanche behavior, stable across platforms.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Derive a substream seed from a master seed and two indices.
///
/// Used to key per-trial, per-point, and per-block RNG streams so whole
/// experiments replay exactly from one master seed.
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ a) ^ b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_indices_give_distinct_seeds() {
        let mut seen = std::collections::HashSet::new();
        for a in 0..50u64 {
            for b in 0..50u64 {
                assert!(seen.insert(derive_seed(7, a, b)));
            }
        }
        assert_ne!(derive_seed(1, 2, 3), derive_seed(2, 2, 3));
        assert_eq!(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
    }
}
