//! Named evaluation tasks and their structured result records.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans, DEFAULT_RESTARTS};
use super::metrics::{ari, clustering_accuracy, nmi};
use super::probe::{linear_probe, mean_std, ProbeConfig};
use crate::error::{Error, Result};
use crate::graph::{make_splits, Graph, SplitRatio};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub task: String,
    /// Number of random splits (classification) or k-means seeds (clustering).
    pub n_splits: usize,
    pub ratio: SplitRatio,
    pub seed: u64,
    pub probe: ProbeConfig,
    pub restarts: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            task: "classify".into(),
            n_splits: 10,
            ratio: SplitRatio::STANDARD,
            seed: 0,
            probe: ProbeConfig::default(),
            restarts: DEFAULT_RESTARTS,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_splits == 0 {
            return Err(Error::Contract("n_splits must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Contract("restarts must be positive".into()));
        }
        if !(self.probe.lr > 0.0 && self.probe.lr.is_finite()) {
            return Err(Error::Contract(format!("probe lr = {}", self.probe.lr)));
        }
        self.ratio.validate()
    }
}

/// One aggregated metric with its per-split (or per-seed) values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub dataset: String,
    pub task: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

impl MetricRecord {
    pub fn new(dataset: &str, task: &str, metric: &str, values: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&values);
        Self { dataset: dataset.into(), task: task.into(), metric: metric.into(), mean, std, values }
    }
}

/// Clustering agreement of one k-means run against the true classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub assignment: Vec<usize>,
}

/// k-means with `k` equal to the number of classes on every row of `x`.
pub fn cluster_embeddings(x: &Matrix, labels: &[usize], seed: u64, restarts: usize) -> Result<ClusteringResult> {
    if labels.len() != x.rows() {
        return Err(Error::Contract(format!("{} labels for {} embeddings", labels.len(), x.rows())));
    }
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let fit = kmeans(x, classes.len(), seed, restarts)?;
    Ok(ClusteringResult {
        acc: clustering_accuracy(&fit.assignment, labels)?,
        nmi: nmi(&fit.assignment, labels)?,
        ari: ari(&fit.assignment, labels)?,
        assignment: fit.assignment,
    })
}

pub trait EvalTask: Send + Sync {
    fn name(&self) -> &'static str;

    fn run(&self, g: &Graph, embeddings: &Matrix, cfg: &EvalConfig) -> Result<Vec<MetricRecord>>;
}

fn labels_of(g: &Graph) -> Result<&[usize]> {
    g.labels().ok_or_else(|| Error::Contract(format!("dataset `{}` has no labels", g.name())))
}

fn check_rows(g: &Graph, embeddings: &Matrix) -> Result<()> {
    if embeddings.rows() != g.n_nodes() {
        return Err(Error::Contract(format!("{} embeddings for {} nodes", embeddings.rows(), g.n_nodes())));
    }
    Ok(())
}

/// Linear probe over `n_splits` random splits.
pub struct Classify;

impl EvalTask for Classify {
    fn name(&self) -> &'static str {
        "classify"
    }

    fn run(&self, g: &Graph, embeddings: &Matrix, cfg: &EvalConfig) -> Result<Vec<MetricRecord>> {
        check_rows(g, embeddings)?;
        let labels = labels_of(g)?;
        let splits = make_splits(g, cfg.ratio, cfg.n_splits, cfg.seed)?;
        let r = linear_probe(embeddings, labels, &splits, &cfg.probe)?;
        Ok(vec![MetricRecord::new(g.name(), self.name(), "accuracy", r.accuracies)])
    }
}

/// k-means on all nodes, repeated for `n_splits` seeds.
pub struct Cluster;

impl EvalTask for Cluster {
    fn name(&self) -> &'static str {
        "cluster"
    }

    fn run(&self, g: &Graph, embeddings: &Matrix, cfg: &EvalConfig) -> Result<Vec<MetricRecord>> {
        check_rows(g, embeddings)?;
        let labels = labels_of(g)?;
        let runs = (0..cfg.n_splits as u64)
            .map(|k| cluster_embeddings(embeddings, labels, cfg.seed.wrapping_add(k), cfg.restarts))
            .collect::<Result<Vec<_>>>()?;
        Ok(vec![
            MetricRecord::new(g.name(), self.name(), "acc", runs.iter().map(|r| r.acc).collect()),
            MetricRecord::new(g.name(), self.name(), "nmi", runs.iter().map(|r| r.nmi).collect()),
            MetricRecord::new(g.name(), self.name(), "ari", runs.iter().map(|r| r.ari).collect()),
        ])
    }
}

type Constructor = fn() -> Box<dyn EvalTask>;

/// Name-keyed evaluation tasks.
pub struct TaskRegistry {
    entries: BTreeMap<&'static str, Constructor>,
}

impl Default for TaskRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TaskRegistry {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("classify", || Box::new(Classify));
        r.register("cluster", || Box::new(Cluster));
        r
    }

    pub fn register(&mut self, name: &'static str, ctor: Constructor) {
        self.entries.insert(name, ctor);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn create(&self, name: &str) -> Result<Box<dyn EvalTask>> {
        let ctor = self.entries.get(name).ok_or_else(|| Error::UnknownStrategy {
            kind: "evaluation task",
            name: name.into(),
            known: self.names().join(", "),
        })?;
        Ok(ctor())
    }
}

/// Runs the configured task from the builtin registry.
pub fn evaluate(g: &Graph, embeddings: &Matrix, cfg: &EvalConfig) -> Result<Vec<MetricRecord>> {
    cfg.validate()?;
    TaskRegistry::builtin().create(&cfg.task)?.run(g, embeddings, cfg)
}

pub fn records_to_jsonl(records: &[MetricRecord]) -> String {
    records.iter().map(|r| serde_json::to_string(r).expect("records serialize") + "\n").collect()
}

pub fn write_records(records: &[MetricRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, records_to_jsonl(records)).map_err(|e| Error::io(path, e))
}

/// Fixed-width `mean ± std` table, values in percent.
pub fn format_table(records: &[MetricRecord]) -> String {
    let mut out = format!("{:<16} {:<10} {:<10} {:>16}\n", "dataset", "task", "metric", "mean ± std (%)");
    for r in records {
        let cell = format!("{:.2} ± {:.2}", 100.0 * r.mean, 100.0 * r.std);
        writeln!(out, "{:<16} {:<10} {:<10} {:>16}", r.dataset, r.task, r.metric, cell).expect("write to string");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::synthetic::SyntheticSpec;

    fn graph() -> Graph {
        SyntheticSpec {
            n_nodes: 60,
            n_classes: 3,
            n_features: 6,
            n_edges: 120,
            homophily: 0.2,
            feature_signal: 3.0,
            seed: 4,
        }
        .generate()
        .unwrap()
    }

    #[test]
    fn classify_records_one_value_per_split() {
        let g = graph();
        let cfg = EvalConfig { n_splits: 3, probe: ProbeConfig { epochs: 20, lr: 0.01 }, ..Default::default() };
        let recs = evaluate(&g, g.features(), &cfg).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].values.len(), 3);
        assert!(recs[0].values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn cluster_records_three_metrics() {
        let g = graph();
        let cfg = EvalConfig { task: "cluster".into(), n_splits: 2, restarts: 2, ..Default::default() };
        let recs = evaluate(&g, g.features(), &cfg).unwrap();
        let names: Vec<&str> = recs.iter().map(|r| r.metric.as_str()).collect();
        assert_eq!(names, ["acc", "nmi", "ari"]);
    }

    #[test]
    fn unknown_task_names_the_registered_ones() {
        let err = TaskRegistry::builtin().create("regress").err().unwrap().to_string();
        assert!(err.contains("classify, cluster"), "{err}");
    }

    #[test]
    fn mismatched_embedding_rows_are_rejected() {
        let g = graph();
        assert!(evaluate(&g, &Matrix::zeros(5, 2), &EvalConfig::default()).is_err());
    }

    #[test]
    fn table_lists_every_record() {
        let r = MetricRecord::new("toy", "cluster", "nmi", vec![0.5, 0.7]);
        let t = format_table(&[r]);
        assert!(t.contains("60.00 ± 10.00"), "{t}");
    }
}
