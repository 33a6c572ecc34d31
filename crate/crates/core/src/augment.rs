//! Stochastic view perturbations: feature-column masking and edge dropping.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Probability that a feature column is masked.
    pub p_s: f64,
    /// Probability that an undirected edge is dropped.
    pub p_c: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { p_s: 0.3, p_c: 0.3 }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_s", self.p_s), ("p_c", self.p_c)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Contract(format!("{name} = {p} is outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// One keep/mask flag per feature column; `true` keeps the column.
pub fn draw_feature_mask(n_features: usize, p_s: f64, rng: &mut impl Rng) -> Vec<bool> {
    (0..n_features).map(|_| rng.gen::<f64>() >= p_s).collect()
}

/// Zeroes a random subset of feature columns, the same subset for every node.
pub fn mask_features(x: &Matrix, p_s: f64, rng: &mut impl Rng) -> Matrix {
    let keep = draw_feature_mask(x.cols(), p_s, rng);
    apply_feature_mask(x, &keep)
}

pub fn apply_feature_mask(x: &Matrix, keep: &[bool]) -> Matrix {
    Matrix::from_fn(x.rows(), x.cols(), |i, j| if keep[j] { x.get(i, j) } else { 0.0 })
}

/// Keeps each undirected edge independently with probability `1 - p_c`.
pub fn drop_edges(g: &Graph, p_c: f64, rng: &mut impl Rng) -> Graph {
    g.with_edges_filtered(|_, _| rng.gen::<f64>() >= p_c)
}
