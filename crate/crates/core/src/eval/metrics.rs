//! Clustering agreement: best-mapping accuracy, NMI and ARI.

use crate::error::{Error, Result};

/// Contingency counts `table[p][t]` over compacted labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contingency {
    pub table: Vec<Vec<usize>>,
    pub n: usize,
}

impl Contingency {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::Contract(format!("{} predictions for {} labels", pred.len(), truth.len())));
        }
        let (p, kp) = compact(pred);
        let (t, kt) = compact(truth);
        let mut table = vec![vec![0; kt]; kp];
        for (&a, &b) in p.iter().zip(&t) {
            table[a][b] += 1;
        }
        Ok(Self { table, n: pred.len() })
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.table.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<usize> {
        let cols = self.table.first().map_or(0, Vec::len);
        (0..cols).map(|j| self.table.iter().map(|r| r[j]).sum()).collect()
    }
}

/// Relabels to `0..k` preserving label order.
fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut sorted = labels.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let dense = labels.iter().map(|l| sorted.binary_search(l).expect("label present")).collect();
    (dense, sorted.len())
}

/// Minimum-cost perfect matching on a square cost matrix. Returns the
/// column assigned to each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // Potentials formulation with 1-based sentinels (row/column 0).
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    for i in 1..=n {
        col_owner[0] = i;
        let mut j0 = 0;
        let mut min_v = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if reduced < min_v[j] {
                    min_v[j] = reduced;
                    way[j] = j0;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if col_owner[j] > 0 {
            assignment[col_owner[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Fraction of points matched under the best one-to-one cluster-to-class
/// mapping.
pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let c = Contingency::new(pred, truth)?;
    if c.n == 0 {
        return Err(Error::Contract("clustering accuracy of an empty labeling".into()));
    }
    let size = c.table.len().max(c.col_sums().len());
    let max = *c.table.iter().flatten().max().unwrap_or(&0) as f64;
    let cost: Vec<Vec<f64>> = (0..size)
        .map(|i| (0..size).map(|j| max - c.table.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0) as f64).collect())
        .collect();
    let matched: usize = hungarian(&cost)
        .iter()
        .enumerate()
        .map(|(i, &j)| c.table.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0))
        .sum();
    Ok(matched as f64 / c.n as f64)
}

fn entropy(counts: &[usize], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `I(P; T) / sqrt(H(P) H(T))` with natural logs. Both labelings a single
/// cluster gives 1; otherwise a zero entropy on either side gives 0.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let c = Contingency::new(pred, truth)?;
    if c.n == 0 {
        return Err(Error::Contract("NMI of an empty labeling".into()));
    }
    let n = c.n as f64;
    let (rows, cols) = (c.row_sums(), c.col_sums());
    let (hp, ht) = (entropy(&rows, n), entropy(&cols, n));
    if hp == 0.0 && ht == 0.0 {
        return Ok(1.0);
    }
    if hp == 0.0 || ht == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (i, row) in c.table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (rows[i] as f64 * cols[j] as f64)).ln();
            }
        }
    }
    Ok((mi / (hp * ht).sqrt()).clamp(0.0, 1.0))
}

fn pairs(k: usize) -> f64 {
    let k = k as f64;
    k * (k - 1.0) / 2.0
}

/// Adjusted Rand index by pair counting. When the adjustment is degenerate
/// (zero denominator) the result is 1 for identical partitions, else 0.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let c = Contingency::new(pred, truth)?;
    if c.n == 0 {
        return Err(Error::Contract("ARI of an empty labeling".into()));
    }
    let index: f64 = c.table.iter().flatten().map(|&x| pairs(x)).sum();
    let a: f64 = c.row_sums().into_iter().map(pairs).sum();
    let b: f64 = c.col_sums().into_iter().map(pairs).sum();
    let total = pairs(c.n);
    let denom = if total > 0.0 { (a + b) / 2.0 - a * b / total } else { 0.0 };
    if denom == 0.0 {
        let identical =
            c.table.iter().all(|r| r.iter().filter(|&&x| x > 0).count() == 1) && c.col_sums().len() == c.table.len();
        return Ok(if identical { 1.0 } else { 0.0 });
    }
    Ok((index - a * b / total) / denom)
}
