use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub name: String,
    pub n_nodes: usize,
    pub n_features: usize,
    pub n_classes: usize,
}

/// Lines dropped while reading `edges.tsv`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub self_loops: usize,
    pub duplicates: usize,
}

impl LoadReport {
    pub fn warnings(&self) -> usize {
        self.self_loops + self.duplicates
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_graph(dir: impl AsRef<Path>) -> Result<Graph> {
    load_graph_with_report(dir).map(|(g, _)| g)
}

pub fn load_graph_with_report(dir: impl AsRef<Path>) -> Result<(Graph, LoadReport)> {
    let dir = dir.as_ref();

    let meta_path = dir.join("meta.json");
    let meta: DatasetMeta =
        serde_json::from_str(&read(&meta_path)?).map_err(|e| Error::format(&meta_path, e.line(), e.to_string()))?;
    let n = meta.n_nodes;

    let feat_path = dir.join("features.csv");
    let text = read(&feat_path)?;
    let mut data = Vec::with_capacity(n * meta.n_features);
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        rows += 1;
        if rows > n {
            return Err(Error::format(&feat_path, lineno + 1, format!("more than {n} feature rows")));
        }
        let before = data.len();
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::format(&feat_path, lineno + 1, format!("bad real `{}`", field.trim())))?;
            data.push(v);
        }
        if data.len() - before != meta.n_features {
            return Err(Error::format(
                &feat_path,
                lineno + 1,
                format!("{} values, expected {}", data.len() - before, meta.n_features),
            ));
        }
    }
    if rows != n {
        return Err(Error::format(&feat_path, rows, format!("{rows} feature rows, expected {n}")));
    }
    let features = Matrix::from_vec(n, meta.n_features, data)?;

    let edge_path = dir.join("edges.tsv");
    let text = read(&edge_path)?;
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let mut next = || -> Result<usize> {
            let tok = parts.next().ok_or_else(|| Error::format(&edge_path, lineno + 1, "expected two node indices"))?;
            let idx: usize =
                tok.parse().map_err(|_| Error::format(&edge_path, lineno + 1, format!("bad node index `{tok}`")))?;
            if idx >= n {
                return Err(Error::format(&edge_path, lineno + 1, format!("node index {idx} >= {n}")));
            }
            Ok(idx)
        };
        let (i, j) = (next()?, next()?);
        edges.push((i, j));
    }

    let label_path = dir.join("labels.txt");
    let labels = if label_path.exists() {
        let text = read(&label_path)?;
        let mut labels = Vec::with_capacity(n);
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let c: usize = line
                .trim()
                .parse()
                .map_err(|_| Error::format(&label_path, lineno + 1, format!("bad label `{}`", line.trim())))?;
            if c >= meta.n_classes {
                return Err(Error::format(
                    &label_path,
                    lineno + 1,
                    format!("label {c} >= n_classes {}", meta.n_classes),
                ));
            }
            labels.push(c);
        }
        if labels.len() != n {
            return Err(Error::format(&label_path, labels.len(), format!("{} labels, expected {n}", labels.len())));
        }
        Some(labels)
    } else {
        None
    };

    let (graph, cleanup) = Graph::from_edge_list(meta.name, features, edges, labels, meta.n_classes)?;
    let report = LoadReport { self_loops: cleanup.self_loops, duplicates: cleanup.duplicates };
    if report.warnings() > 0 {
        log::warn!(
            "{}: dropped {} self-loop and {} duplicate edge lines",
            edge_path.display(),
            report.self_loops,
            report.duplicates
        );
    }
    Ok((graph, report))
}

/// Writes `g` in the canonical directory format. Reals use the shortest
/// representation that parses back to the same value.
pub fn write_graph(g: &Graph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = DatasetMeta {
        name: g.name().to_string(),
        n_nodes: g.n_nodes(),
        n_features: g.n_features(),
        n_classes: g.n_classes(),
    };
    let write = |name: &str, body: &[u8]| -> Result<()> {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(body).map_err(|e| Error::io(&path, e))
    };
    let meta_json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    write("meta.json", meta_json.as_bytes())?;

    let mut edges = String::new();
    for &(i, j) in g.edges() {
        edges.push_str(&format!("{i}\t{j}\n"));
    }
    write("edges.tsv", edges.as_bytes())?;

    let mut feats = String::new();
    for i in 0..g.n_nodes() {
        let row: Vec<String> = g.features().row(i).iter().map(|v| format!("{v}")).collect();
        feats.push_str(&row.join(","));
        feats.push('\n');
    }
    write("features.csv", feats.as_bytes())?;

    if let Some(labels) = g.labels() {
        let body: String = labels.iter().map(|c| format!("{c}\n")).collect();
        write("labels.txt", body.as_bytes())?;
    }
    Ok(())
}
