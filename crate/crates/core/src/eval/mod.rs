//! Downstream evaluation of frozen embeddings.

pub mod kmeans;
pub mod metrics;
pub mod probe;
pub mod tasks;

pub use kmeans::{kmeans, KMeansResult};
pub use metrics::{ari, clustering_accuracy, hungarian, nmi, Contingency};
pub use probe::{linear_probe, probe_split, ClassificationResult, LabelSource, ProbeConfig};
pub use tasks::{
    cluster_embeddings, evaluate, format_table, records_to_jsonl, write_records, Classify, Cluster, ClusteringResult,
    EvalConfig, EvalTask, MetricRecord, TaskRegistry,
};
