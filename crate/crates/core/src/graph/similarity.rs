use serde::{Deserialize, Serialize};

use super::Graph;
use crate::tensor::row_cosine;

/// Cosine similarity between each node's features and the mean features of
/// its neighbors. Isolated nodes get 0 and are flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodSimilarity {
    pub values: Vec<f64>,
    pub isolated: Vec<bool>,
}

pub fn neighborhood_similarity(g: &Graph) -> NeighborhoodSimilarity {
    let x = g.features();
    let adj = g.adjacency_lists();
    let mut values = Vec::with_capacity(g.n_nodes());
    let mut isolated = Vec::with_capacity(g.n_nodes());
    let mut mean = vec![0.0; g.n_features()];
    for (i, neighbors) in adj.iter().enumerate() {
        if neighbors.is_empty() {
            values.push(0.0);
            isolated.push(true);
            continue;
        }
        mean.iter_mut().for_each(|m| *m = 0.0);
        for &j in neighbors {
            for (m, v) in mean.iter_mut().zip(x.row(j)) {
                *m += v;
            }
        }
        let inv = 1.0 / neighbors.len() as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        values.push(row_cosine(x.row(i), &mean));
        isolated.push(false);
    }
    NeighborhoodSimilarity { values, isolated }
}

/// Uniform-bin histogram on a closed interval; the top edge belongs to the last bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: impl IntoIterator<Item = f64>, bins: usize, lo: f64, hi: f64) -> Self {
        let mut counts = vec![0; bins];
        let width = (hi - lo) / bins as f64;
        for v in values {
            if !(lo..=hi).contains(&v) {
                continue;
            }
            let b = (((v - lo) / width).floor() as usize).min(bins - 1);
            counts[b] += 1;
        }
        Self { lo, hi, counts }
    }

    pub fn bin_edges(&self, b: usize) -> (f64, f64) {
        let width = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + width * b as f64, self.lo + width * (b + 1) as f64)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

impl NeighborhoodSimilarity {
    /// 50 bins over [-1, 1], counting non-isolated nodes only.
    pub fn histogram(&self) -> Histogram {
        Histogram::new(self.values.iter().zip(&self.isolated).filter(|(_, &iso)| !iso).map(|(&v, _)| v), 50, -1.0, 1.0)
    }
}
