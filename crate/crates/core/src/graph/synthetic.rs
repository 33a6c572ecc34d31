//! Labeled random graphs with tunable homophily, for tests and benchmarks.

use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Graph;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Contextual stochastic block model: Gaussian class-conditional features
/// and edges that join same-class endpoints with probability `homophily`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_nodes: usize,
    pub n_classes: usize,
    pub n_features: usize,
    pub n_edges: usize,
    pub homophily: f64,
    /// Norm of each class mean relative to unit-variance noise per feature.
    pub feature_signal: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn generate(&self) -> Result<Graph> {
        let (n, c) = (self.n_nodes, self.n_classes);
        if c == 0 || n < 2 * c {
            return Err(Error::Contract(format!("need at least two nodes per class ({n} nodes, {c} classes)")));
        }
        if self.n_edges > n * (n - 1) / 2 {
            return Err(Error::Contract(format!("{} edges do not fit on {n} nodes", self.n_edges)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        let mut members = vec![Vec::new(); c];
        for (i, &l) in labels.iter().enumerate() {
            members[l].push(i);
        }

        let scale = self.feature_signal / (self.n_features as f64).sqrt();
        let centers = Matrix::from_fn(c, self.n_features, |_, _| {
            scale * {
                let v: f64 = StandardNormal.sample(&mut rng);
                v
            }
        });
        let features = Matrix::from_fn(n, self.n_features, |i, j| {
            centers.get(labels[i], j) + {
                let v: f64 = StandardNormal.sample(&mut rng);
                v
            }
        });

        let mut seen = HashSet::with_capacity(self.n_edges);
        let mut edges = Vec::with_capacity(self.n_edges);
        while edges.len() < self.n_edges {
            let i = rng.gen_range(0..n);
            let li = labels[i];
            let lj = if c == 1 || rng.gen_bool(self.homophily.clamp(0.0, 1.0)) {
                li
            } else {
                let other = rng.gen_range(0..c - 1);
                if other >= li {
                    other + 1
                } else {
                    other
                }
            };
            let j = members[lj][rng.gen_range(0..members[lj].len())];
            if i == j {
                continue;
            }
            let e = (i.min(j), i.max(j));
            if seen.insert(e) {
                edges.push(e);
            }
        }
        let name = format!("csbm-n{n}-e{}-h{}", self.n_edges, self.homophily);
        Ok(Graph::from_edge_list(name, features, edges, Some(labels), c)?.0)
    }
}
