//! Linear-probe node classification on frozen embeddings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Split;
use crate::optim::{Adam, AdamState};
use crate::tensor::{CompGraph, Matrix};

/// Read access to node labels. The probe asks for test labels only after
/// model selection is finished.
pub trait LabelSource {
    fn n_classes(&self) -> usize;
    fn label(&self, node: usize) -> usize;
}

impl LabelSource for [usize] {
    fn n_classes(&self) -> usize {
        self.iter().max().map_or(0, |m| m + 1)
    }

    fn label(&self, node: usize) -> usize {
        self[node]
    }
}

impl LabelSource for Vec<usize> {
    fn n_classes(&self) -> usize {
        self.as_slice().n_classes()
    }

    fn label(&self, node: usize) -> usize {
        self[node]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 300, lr: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    /// Test accuracy of each split, in split order.
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over splits.
    pub std: f64,
}

impl ClassificationResult {
    pub fn from_accuracies(accuracies: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&accuracies);
        Self { accuracies, mean, std }
    }
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Column mean and standard deviation over `rows`; zero spread maps to 1.
fn standardizer(x: &Matrix, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; x.cols()];
    for &i in rows {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; x.cols()];
    for &i in rows {
        for ((s, v), m) in sd.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let sd = sd.into_iter().map(|s| if s > 0.0 { s.sqrt() } else { 1.0 }).collect();
    (mean, sd)
}

fn standardized(x: &Matrix, rows: &[usize], mean: &[f64], sd: &[f64]) -> Matrix {
    Matrix::from_fn(rows.len(), x.cols(), |r, j| (x.get(rows[r], j) - mean[j]) / sd[j])
}

fn predict(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Vec<usize>> {
    let logits = x.matmul(w)?;
    Ok((0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v + b.get(0, c) > row[best] + b.get(0, best) {
                    best = c;
                }
            }
            best
        })
        .collect())
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / pred.len() as f64
}

/// Trains on `split.train`, keeps the weights with the best validation
/// accuracy (earliest on ties) and returns their test accuracy.
pub fn probe_split<L: LabelSource + ?Sized>(
    embeddings: &Matrix,
    labels: &L,
    split: &Split,
    cfg: &ProbeConfig,
) -> Result<f64> {
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::Contract("probe split needs train and test nodes".into()));
    }
    if let Some(&i) = split.train.iter().chain(&split.val).chain(&split.test).find(|&&i| i >= embeddings.rows()) {
        return Err(Error::Contract(format!("split node {i} outside {} embeddings", embeddings.rows())));
    }
    let n_classes = labels.n_classes();
    let y_train: Vec<usize> = split.train.iter().map(|&i| labels.label(i)).collect();
    if y_train.iter().all(|&y| y == y_train[0]) {
        return Err(Error::Contract("train split holds a single class".into()));
    }
    let y_val: Vec<usize> = split.val.iter().map(|&i| labels.label(i)).collect();

    let (mean, sd) = standardizer(embeddings, &split.train);
    let x_train = standardized(embeddings, &split.train, &mean, &sd);
    let x_val = standardized(embeddings, &split.val, &mean, &sd);

    let f = embeddings.cols();
    let mut w = Matrix::zeros(f, n_classes);
    let mut b = Matrix::zeros(1, n_classes);
    let adam = Adam::new(cfg.lr);
    let mut state = AdamState::for_shapes([(f, n_classes), (1, n_classes)]);
    let mut best: Option<(f64, Matrix, Matrix)> = None;

    for _ in 0..cfg.epochs {
        let mut g = CompGraph::new();
        let (xv, wv, bv) = (g.constant(x_train.clone()), g.param(w.clone()), g.param(b.clone()));
        let xw = g.matmul(xv, wv)?;
        let logits = g.add(xw, bv)?;
        let loss = g.softmax_cross_entropy(logits, &y_train)?;
        let grads = g.backward(loss)?;
        let gw = grads.get_or_zeros(wv, w.shape());
        let gb = grads.get_or_zeros(bv, b.shape());
        adam.step(&mut [&mut w, &mut b], &[gw, gb], &mut state)?;

        // Without validation nodes the last iterate is kept.
        let score = if split.val.is_empty() { 0.0 } else { accuracy(&predict(&x_val, &w, &b)?, &y_val) };
        if best.as_ref().map_or(true, |(s, _, _)| split.val.is_empty() || score > *s) {
            best = Some((score, w.clone(), b.clone()));
        }
    }
    let (w, b) = match best {
        Some((_, w, b)) => (w, b),
        None => (w, b),
    };

    let x_test = standardized(embeddings, &split.test, &mean, &sd);
    let pred = predict(&x_test, &w, &b)?;
    let y_test: Vec<usize> = split.test.iter().map(|&i| labels.label(i)).collect();
    Ok(accuracy(&pred, &y_test))
}

/// Probe accuracy over every split.
pub fn linear_probe<L: LabelSource + ?Sized>(
    embeddings: &Matrix,
    labels: &L,
    splits: &[Split],
    cfg: &ProbeConfig,
) -> Result<ClassificationResult> {
    if !embeddings.is_finite() {
        return Err(Error::Contract("probe embeddings have non-finite entries".into()));
    }
    let accuracies = splits.iter().map(|s| probe_split(embeddings, labels, s, cfg)).collect::<Result<Vec<_>>>()?;
    Ok(ClassificationResult::from_accuracies(accuracies))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn split_of(n: usize, seed: u64) -> Split {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (a, b) = (n * 48 / 100, n * 80 / 100);
        Split { train: idx[..a].to_vec(), val: idx[a..b].to_vec(), test: idx[b..].to_vec(), seed }
    }

    #[test]
    fn separated_classes_are_classified_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let labels: Vec<usize> = (0..60).map(|i| i % 2).collect();
        let x = Matrix::from_fn(60, 4, |i, j| {
            let base = if j == 0 {
                if labels[i] == 0 {
                    -10.0
                } else {
                    10.0
                }
            } else {
                0.0
            };
            base + rng.gen_range(-0.5..0.5)
        });
        let r = linear_probe(&x, &labels, &[split_of(60, 0), split_of(60, 1)], &ProbeConfig::default()).unwrap();
        assert_eq!(r.accuracies, vec![1.0, 1.0]);
        assert_eq!((r.mean, r.std), (1.0, 0.0));
    }

    #[test]
    fn shuffled_labels_stay_near_chance() {
        let n = 2000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::from_fn(n, 8, |_, _| rng.gen_range(-1.0..1.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..5)).collect();
        let r = linear_probe(&x, &labels, &[split_of(n, 4)], &ProbeConfig::default()).unwrap();
        assert!((0.14..=0.26).contains(&r.mean), "{}", r.mean);
    }

    #[test]
    fn single_class_train_is_rejected() {
        let x = Matrix::zeros(4, 2);
        let labels = vec![0, 0, 1, 1];
        let split = Split { train: vec![0, 1], val: vec![], test: vec![2, 3], seed: 0 };
        assert!(matches!(probe_split(&x, &labels, &split, &ProbeConfig::default()), Err(Error::Contract(_))));
    }

    #[test]
    fn population_std() {
        let r = ClassificationResult::from_accuracies(vec![0.5, 1.0]);
        assert_eq!((r.mean, r.std), (0.75, 0.25));
    }
}
