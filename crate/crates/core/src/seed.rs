//! Deterministic seed derivation for parallel work.

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the task addressed by `path` under `root`; independent of the
/// order in which tasks are executed.
pub fn child_seed(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(root), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_paths_give_distinct_seeds() {
        let a = child_seed(7, &[1, 2]);
        assert_eq!(a, child_seed(7, &[1, 2]));
        assert_ne!(a, child_seed(7, &[2, 1]));
        assert_ne!(a, child_seed(8, &[1, 2]));
        assert_ne!(child_seed(7, &[0]), child_seed(7, &[0, 0]));
    }
}
