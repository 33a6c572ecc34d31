//! Graph container, canonical on-disk dataset format, adjacency
//! normalization, split generation and ego/neighborhood similarity.
//!
//! A dataset directory holds:
//!
//! * `meta.json`: `{ "name": ..., "n_nodes": N, "n_features": F, "n_classes": C }`
//! * `edges.tsv`: one undirected edge per line, two 0-based indices separated by a tab
//! * `features.csv`: N lines of F comma-separated reals
//! * `labels.txt` (optional): N lines, one 0-based class index each

mod io;
mod similarity;
mod split;
pub mod synthetic;

use std::collections::BTreeSet;

pub use io::{load_graph, load_graph_with_report, write_graph, DatasetMeta, LoadReport};
pub use similarity::{neighborhood_similarity, Histogram, NeighborhoodSimilarity};
pub use split::{make_splits, Split, SplitRatio};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, SparseMatrix};

/// Immutable undirected, unweighted attributed graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    name: String,
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Matrix,
    labels: Option<Vec<usize>>,
    n_classes: usize,
    degree: Vec<usize>,
}

/// Edge-list cleanup counts from [`Graph::from_edge_list`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeCleanup {
    pub self_loops: usize,
    pub duplicates: usize,
}

impl EdgeCleanup {
    pub fn dropped(&self) -> usize {
        self.self_loops + self.duplicates
    }
}

impl Graph {
    /// Builds a graph, dropping self-loops and duplicate or reversed edges.
    pub fn from_edge_list(
        name: impl Into<String>,
        features: Matrix,
        edges: impl IntoIterator<Item = (usize, usize)>,
        labels: Option<Vec<usize>>,
        n_classes: usize,
    ) -> Result<(Self, EdgeCleanup)> {
        let n = features.rows();
        let mut cleanup = EdgeCleanup::default();
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Contract(format!("edge ({i}, {j}) outside {n} nodes")));
            }
            if i == j {
                cleanup.self_loops += 1;
                continue;
            }
            if !set.insert((i.min(j), i.max(j))) {
                cleanup.duplicates += 1;
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Contract(format!("{} labels for {n} nodes", l.len())));
            }
            if let Some(&bad) = l.iter().find(|&&c| c >= n_classes) {
                return Err(Error::Contract(format!("label {bad} outside {n_classes} classes")));
            }
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let degree = degrees(n, &edges);
        let graph = Self { name: name.into(), n_nodes: n, edges, features, labels, n_classes, degree };
        Ok((graph, cleanup))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Undirected edges as `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn degree(&self) -> &[usize] {
        &self.degree
    }

    /// Same nodes, features and labels with a subset of the edges kept.
    pub fn with_edges_filtered(&self, mut keep: impl FnMut(usize, (usize, usize)) -> bool) -> Graph {
        let edges: Vec<(usize, usize)> =
            self.edges.iter().enumerate().filter(|&(k, &e)| keep(k, e)).map(|(_, &e)| e).collect();
        let degree = degrees(self.n_nodes, &edges);
        Graph { edges, degree, ..self.clone() }
    }

    /// Same structure with replaced features.
    pub fn with_features(&self, features: Matrix) -> Result<Graph> {
        if features.rows() != self.n_nodes {
            return Err(Error::Contract(format!("{} feature rows for {} nodes", features.rows(), self.n_nodes)));
        }
        Ok(Graph { features, ..self.clone() })
    }

    /// Neighbor lists in ascending order.
    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }
}

fn degrees(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut d = vec![0; n];
    for &(i, j) in edges {
        d[i] += 1;
        d[j] += 1;
    }
    d
}

/// Symmetric normalization `D^-1/2 (A [+ I]) D^-1/2` in sparse form.
///
/// Without self-loops, isolated nodes get an all-zero row.
pub fn normalized_adjacency_sparse(g: &Graph, add_self_loops: bool) -> SparseMatrix {
    let extra = if add_self_loops { 1.0 } else { 0.0 };
    let inv_sqrt: Vec<f64> = g
        .degree()
        .iter()
        .map(|&d| {
            let d = d as f64 + extra;
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut triplets = Vec::with_capacity(2 * g.n_edges() + g.n_nodes());
    for &(i, j) in g.edges() {
        let w = inv_sqrt[i] * inv_sqrt[j];
        triplets.push((i, j, w));
        triplets.push((j, i, w));
    }
    if add_self_loops {
        for (i, s) in inv_sqrt.iter().enumerate() {
            triplets.push((i, i, s * s));
        }
    }
    SparseMatrix::from_triplets(g.n_nodes(), g.n_nodes(), triplets).expect("edge endpoints are in range")
}

/// Dense form of [`normalized_adjacency_sparse`].
pub fn normalized_adjacency(g: &Graph, add_self_loops: bool) -> Matrix {
    normalized_adjacency_sparse(g, add_self_loops).to_dense()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy(n: usize, edges: &[(usize, usize)]) -> Graph {
        let features = Matrix::from_fn(n, 2, |i, j| (i + j) as f64);
        Graph::from_edge_list("toy", features, edges.iter().copied(), None, 0).unwrap().0
    }

    #[test]
    fn dedup_and_self_loops() {
        let features = Matrix::zeros(5, 1);
        let (g, c) = Graph::from_edge_list("t", features, [(0, 1), (1, 0), (3, 3), (2, 4), (0, 1)], None, 0).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (2, 4)]);
        assert_eq!(c, EdgeCleanup { self_loops: 1, duplicates: 2 });
        assert_eq!(g.degree(), &[1, 1, 1, 0, 1]);
        assert_eq!(g.degree().iter().sum::<usize>(), 2 * g.n_edges());
    }

    #[test]
    fn isolated_node_with_self_loop_normalizes_to_one() {
        let g = toy(1, &[]);
        assert_eq!(normalized_adjacency(&g, true), Matrix::scalar(1.0));
    }

    #[test]
    fn single_edge_normalization_is_one_half() {
        let g = toy(2, &[(0, 1)]);
        let a = normalized_adjacency(&g, true);
        for &v in a.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn normalization_is_exactly_symmetric() {
        let g = toy(6, &[(0, 1), (0, 2), (0, 3), (3, 4), (4, 5), (1, 5)]);
        for loops in [true, false] {
            let a = normalized_adjacency(&g, loops);
            assert_eq!(a, a.transpose());
        }
    }

    #[test]
    fn no_self_loops_leaves_isolated_rows_empty() {
        let g = toy(3, &[(0, 1)]);
        let a = normalized_adjacency(&g, false);
        assert!(a.row(2).iter().all(|&v| v == 0.0));
        assert_eq!(a.get(0, 1), 1.0);
    }

    #[test]
    fn out_of_range_edge_is_rejected() {
        let features = Matrix::zeros(2, 1);
        assert!(Graph::from_edge_list("t", features, [(0, 2)], None, 0).is_err());
    }
}
