//! Counter-based seed derivation: every (stream, counters) tuple maps to an
//! independent seed, so evaluation order never affects results.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub const STREAM_SEARCH: u64 = 1;
pub const STREAM_CANDIDATE: u64 = 2;
pub const STREAM_VERIFY: u64 = 3;
pub const STREAM_TRAIN: u64 = 4;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for `counters` under `master`.
pub fn derive_seed(master: u64, counters: &[u64]) -> u64 {
    let mut h = splitmix64(master);
    for &c in counters {
        h = splitmix64(h ^ splitmix64(c.wrapping_add(GOLDEN)));
    }
    h
}

pub fn candidate_seed(master: u64, gen: usize, idx: usize, attempt: u32) -> u64 {
    derive_seed(master, &[STREAM_CANDIDATE, gen as u64, idx as u64, attempt as u64])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn splitmix_reference_values() {
        // first outputs of the reference generator seeded with 0
        let mut state = 0u64;
        let mut next = || {
            let out = splitmix64(state);
            state = state.wrapping_add(GOLDEN);
            out
        };
        assert_eq!(next(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(next(), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn distinct_tuples_distinct_seeds() {
        let mut seen = HashSet::new();
        for g in 0..20 {
            for i in 0..20 {
                for a in 0..3 {
                    assert!(seen.insert(candidate_seed(7, g, i, a)));
                }
            }
        }
        assert_ne!(derive_seed(1, &[2, 3]), derive_seed(1, &[3, 2]));
        assert_ne!(derive_seed(1, &[]), derive_seed(2, &[]));
        assert_eq!(derive_seed(5, &[1, 2]), derive_seed(5, &[1, 2]));
    }
}
