//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use muse::augment::{apply_feature_mask, draw_feature_mask, drop_edges};
use muse::graph::{normalized_adjacency_sparse, Graph};
use muse::losses::{ContrastConfig, ContrastTerms, ControllerConfig};
use muse::model::{FusionWeights, ModelDims, ModelParams};
use muse::tensor::{Matrix, SparseMatrix};
use muse::training::ContrastInputs;
use rand::Rng;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for relative gradient error, so entries where both
/// gradients vanish compare on absolute error.
pub const REL_FLOOR: f64 = 1e-6;

pub fn uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// `n` nodes, each pair joined with probability 1/2, uniform features.
pub fn random_graph(n: usize, f: usize, n_classes: usize, rng: &mut impl Rng) -> Graph {
    let x = uniform(n, f, rng);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(0.5) {
                edges.push((i, j));
            }
        }
    }
    let labels = (0..n).map(|i| i % n_classes.max(1)).collect();
    Graph::from_edge_list("random", x, edges, Some(labels), n_classes).unwrap().0
}

/// Every parameter, biases included, uniform on (-1, 1).
pub fn random_params(f: usize, dims: ModelDims, rng: &mut impl Rng) -> ModelParams {
    let mut p = ModelParams::init(f, dims, rng);
    for (_, m) in p.named_mut() {
        *m = uniform(m.rows(), m.cols(), rng);
    }
    p
}

/// One perturbed draw of a graph's inputs plus a fixed fusion weight per node.
pub struct Perturbed {
    pub x_aug: Matrix,
    pub adj: Arc<SparseMatrix>,
    pub adj_aug: Arc<SparseMatrix>,
    pub lambda: FusionWeights,
}

pub fn perturb(g: &Graph, rng: &mut impl Rng) -> Perturbed {
    let keep = draw_feature_mask(g.n_features(), 0.3, rng);
    let lambda: Vec<f64> = (0..g.n_nodes()).map(|_| rng.gen_range(0.05..0.95)).collect();
    Perturbed {
        x_aug: apply_feature_mask(g.features(), &keep),
        adj: Arc::new(normalized_adjacency_sparse(g, true)),
        adj_aug: Arc::new(normalized_adjacency_sparse(&drop_edges(g, 0.3, rng), true)),
        lambda: FusionWeights::new(lambda).unwrap(),
    }
}

impl Perturbed {
    pub fn inputs<'a>(&'a self, g: &'a Graph) -> ContrastInputs<'a> {
        ContrastInputs {
            x: g.features(),
            x_aug: self.x_aug.clone(),
            adj: &self.adj,
            adj_aug: Arc::clone(&self.adj_aug),
            lambda: &self.lambda,
        }
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Largest relative error between `grads` and central differences of `f`
/// over every entry of the matrices selected by `pick`.
pub fn max_fd_error(
    params: &ModelParams,
    grads: &[Matrix],
    pick: impl Fn(&mut ModelParams) -> Vec<&mut Matrix>,
    f: impl Fn(&ModelParams) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    let mut p = params.clone();
    let n_mats = pick(&mut p).len();
    assert_eq!(n_mats, grads.len());
    for (k, grad) in grads.iter().enumerate() {
        for idx in 0..grad.len() {
            let orig = pick(&mut p)[k].data()[idx];
            pick(&mut p)[k].data_mut()[idx] = orig + FD_STEP;
            let up = f(&p);
            pick(&mut p)[k].data_mut()[idx] = orig - FD_STEP;
            let down = f(&p);
            pick(&mut p)[k].data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_error(grad.data()[idx], numeric));
        }
    }
    worst
}

// ---- scalar oracles ----

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for k in 0..a.len() {
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < 1e-12 || nb < 1e-12 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// `-log(e^{s_ii~/t} / (sum_{j!=i} e^{s_ij/t} + sum_j e^{s_ij~/t}))`, summed
/// term by term with no shift.
pub fn ntxent_scalar(z: &Matrix, za: &Matrix, i: usize, tau: f64) -> f64 {
    let mut denom = 0.0;
    for j in 0..z.rows() {
        if j != i {
            denom += (cos(z.row(i), z.row(j)) / tau).exp();
        }
        denom += (cos(z.row(i), za.row(j)) / tau).exp();
    }
    -((cos(z.row(i), za.row(i)) / tau).exp() / denom).ln()
}

pub fn view_loss_scalar(z: &Matrix, za: &Matrix, tau: f64) -> f64 {
    let n = z.rows();
    let mut total = 0.0;
    for i in 0..n {
        total += ntxent_scalar(z, za, i, tau) + ntxent_scalar(za, z, i, tau);
    }
    total / (2 * n) as f64
}

/// `relu(h P1 + b1) P2 + b2` by explicit loops.
pub fn project_scalar(p: &ModelParams, h: &Matrix) -> Matrix {
    let (w1, b1, w2, b2) = (&p.projector.w1, &p.projector.b1, &p.projector.w2, &p.projector.b2);
    let mut hidden = Matrix::zeros(h.rows(), w1.cols());
    for i in 0..h.rows() {
        for j in 0..w1.cols() {
            let mut s = b1.get(0, j);
            for k in 0..h.cols() {
                s += h.get(i, k) * w1.get(k, j);
            }
            hidden.set(i, j, s.max(0.0));
        }
    }
    let mut out = Matrix::zeros(h.rows(), w2.cols());
    for i in 0..h.rows() {
        for j in 0..w2.cols() {
            let mut s = b2.get(0, j);
            for k in 0..w2.rows() {
                s += hidden.get(i, k) * w2.get(k, j);
            }
            out.set(i, j, s);
        }
    }
    out
}

pub struct Views<'a> {
    pub h_s: &'a Matrix,
    pub h_s_aug: &'a Matrix,
    pub h_c: &'a Matrix,
    pub h_c_aug: &'a Matrix,
    pub h_f: &'a Matrix,
    pub h_f_aug: &'a Matrix,
}

pub fn contrast_loss_scalar(v: &Views, p: &ModelParams, cfg: &ContrastConfig, terms: ContrastTerms) -> f64 {
    let term = |a: &Matrix, b: &Matrix| view_loss_scalar(&project_scalar(p, a), &project_scalar(p, b), cfg.tau);
    let mut total = 0.0;
    if terms.semantic {
        total += term(v.h_s, v.h_s_aug);
    }
    if terms.contextual {
        total += cfg.beta1 * term(v.h_c, v.h_c_aug);
    }
    if terms.fusion {
        total += cfg.beta2 * term(v.h_f, v.h_f_aug);
    }
    total
}

pub fn controller_loss_scalar(lambda: &[f64], h_s: &Matrix, h_c: &Matrix, cfg: &ControllerConfig) -> f64 {
    let mut sim = 0.0;
    let mut sq = 0.0;
    let mut sum = 0.0;
    for i in 0..lambda.len() {
        sim += lambda[i] * cos(h_s.row(i), h_c.row(i));
        sq += lambda[i] * lambda[i];
        sum += lambda[i];
    }
    sim + cfg.alpha1 * sq.sqrt() + cfg.alpha2 * (sum / lambda.len() as f64 - cfg.epsilon).abs()
}

/// Best agreement over every one-to-one pairing of clusters and classes,
/// by enumerating permutations of the padded contingency table.
pub fn brute_force_accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let kp = pred.iter().max().map_or(0, |m| m + 1);
    let kt = truth.iter().max().map_or(0, |m| m + 1);
    let k = kp.max(kt);
    let mut table = vec![vec![0usize; k]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        table[p][t] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0;
    permute(&mut perm, 0, &mut |perm| {
        let agree: usize = (0..k).map(|i| table[i][perm[i]]).sum();
        best = best.max(agree);
    });
    best as f64 / pred.len() as f64
}

fn permute(v: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == v.len() {
        visit(v);
        return;
    }
    for i in start..v.len() {
        v.swap(start, i);
        permute(v, start + 1, visit);
        v.swap(start, i);
    }
}

pub fn factorial(k: usize) -> usize {
    (1..=k).product()
}
