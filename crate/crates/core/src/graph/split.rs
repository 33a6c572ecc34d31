use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};

const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatio {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatio {
    pub const STANDARD: SplitRatio = SplitRatio { train: 0.48, val: 0.32, test: 0.20 };

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) || self.train <= 0.0 {
            return Err(Error::Contract(format!("invalid split ratio {self:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!("split ratio {self:?} does not sum to 1")));
        }
        Ok(())
    }

    /// Part sizes for `n` items by largest-remainder rounding. Ties go to
    /// the earlier part (train, then val, then test).
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let exact = [self.train * n as f64, self.val * n as f64, self.test * n as f64];
        let mut sizes = exact.map(|x| x.floor() as usize);
        let assigned: usize = sizes.iter().sum();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.partial_cmp(&ra).expect("finite remainders").then(a.cmp(&b))
        });
        for &k in order.iter().take(n.saturating_sub(assigned)) {
            sizes[k] += 1;
        }
        sizes
    }
}

/// Disjoint train/validation/test node sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// `n_splits` independent shuffles of the labeled nodes. Split `k` is drawn
/// from seed `seed + k` and resampled until every class occurs in train.
pub fn make_splits(g: &Graph, ratio: SplitRatio, n_splits: usize, seed: u64) -> Result<Vec<Split>> {
    ratio.validate()?;
    let labels = g.labels().ok_or_else(|| Error::Contract("splits need a labeled graph".into()))?;
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let [n_train, n_val, _] = ratio.sizes(labels.len());

    (0..n_splits as u64)
        .map(|k| {
            let split_seed = seed.wrapping_add(k);
            let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
            for _ in 0..MAX_ATTEMPTS {
                let mut nodes: Vec<usize> = (0..labels.len()).collect();
                nodes.shuffle(&mut rng);
                let train = &nodes[..n_train];
                let mut seen = vec![false; g.n_classes().max(classes.last().map_or(0, |c| c + 1))];
                for &i in train {
                    seen[labels[i]] = true;
                }
                if classes.iter().all(|&c| seen[c]) {
                    return Ok(Split {
                        train: train.to_vec(),
                        val: nodes[n_train..n_train + n_val].to_vec(),
                        test: nodes[n_train + n_val..].to_vec(),
                        seed: split_seed,
                    });
                }
            }
            Err(Error::Split(format!(
                "no split with every class in train after {MAX_ATTEMPTS} attempts (seed {split_seed})"
            )))
        })
        .collect()
}
