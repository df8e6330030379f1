use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Seeded random `k`-fold partition of `0..n` (no stratification).
///
/// Validation folds differ in size by at most one; the first `n % k` folds
/// take the extra sample. Index lists are returned sorted.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k == 0 || n < k {
        return Err(Error::InvalidSplit { n, k });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut val = perm[start..start + size].to_vec();
        let mut train: Vec<usize> = perm[..start].iter().chain(&perm[start + size..]).copied().collect();
        val.sort_unstable();
        train.sort_unstable();
        folds.push(Fold { train, val });
        start += size;
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_into_five() {
        let folds = kfold_split(10, 5, 1).unwrap();
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.val.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        for f in &folds {
            assert_eq!(f.val.len(), 2);
            assert_eq!(f.train.len(), 8);
            assert!(f.val.iter().all(|v| !f.train.contains(v)));
        }
    }

    #[test]
    fn uneven_sizes() {
        let sizes: Vec<usize> = kfold_split(11, 5, 4).unwrap().iter().map(|f| f.val.len()).collect();
        assert_eq!(sizes, [3, 2, 2, 2, 2]);
    }

    #[test]
    fn deterministic_and_rejects_small_n() {
        assert_eq!(kfold_split(30, 5, 7).unwrap(), kfold_split(30, 5, 7).unwrap());
        assert_ne!(kfold_split(30, 5, 7).unwrap(), kfold_split(30, 5, 8).unwrap());
        assert_eq!(kfold_split(4, 5, 0), Err(Error::InvalidSplit { n: 4, k: 5 }));
    }
}
