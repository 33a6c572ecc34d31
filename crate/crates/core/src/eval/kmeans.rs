//! Lloyd's k-means with k-means++ seeding and restarts.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const DEFAULT_RESTARTS: usize = 10;
pub const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignment: Vec<usize>,
    pub centroids: Matrix,
    /// Within-cluster sum of squares of the final assignment.
    pub wcss: f64,
    /// WCSS after every iteration of the winning restart.
    pub history: Vec<f64>,
    pub converged: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = sq_dist(point, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(x: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = x.rows();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            // Every point coincides with a centroid; take any unused index.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(next)));
        }
    }
    x.select_rows(&chosen)
}

/// Centroids as cluster means, WCSS of the assignment against them, and
/// the clusters left empty.
fn update(x: &Matrix, assignment: &[usize], k: usize) -> (Matrix, Vec<usize>) {
    let mut centroids = Matrix::zeros(k, x.cols());
    let mut counts = vec![0usize; k];
    for (i, &c) in assignment.iter().enumerate() {
        counts[c] += 1;
        for (s, v) in centroids.row_mut(c).iter_mut().zip(x.row(i)) {
            *s += v;
        }
    }
    for (c, &cnt) in counts.iter().enumerate() {
        if cnt > 0 {
            centroids.row_mut(c).iter_mut().for_each(|v| *v /= cnt as f64);
        }
    }
    (centroids, counts)
}

fn wcss(x: &Matrix, assignment: &[usize], centroids: &Matrix) -> f64 {
    assignment.iter().enumerate().map(|(i, &c)| sq_dist(x.row(i), centroids.row(c))).sum()
}

fn lloyd(x: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> KMeansResult {
    let n = x.rows();
    let mut centroids = plus_plus(x, k, rng);
    let mut assignment: Vec<usize> = (0..n).map(|i| nearest(x.row(i), &centroids).0).collect();
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let (mut c, mut counts) = update(x, &assignment, k);
        // An empty cluster takes the point farthest from its own centroid.
        while let Some(empty) = counts.iter().position(|&cnt| cnt == 0) {
            let (far, _) = (0..n)
                .filter(|&i| counts[assignment[i]] > 1)
                .map(|i| (i, sq_dist(x.row(i), c.row(assignment[i]))))
                .fold((usize::MAX, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
            assignment[far] = empty;
            (c, counts) = update(x, &assignment, k);
        }
        centroids = c;
        history.push(wcss(x, &assignment, &centroids));
        let next: Vec<usize> = (0..n)
            .map(|i| {
                let (best, d) = nearest(x.row(i), &centroids);
                // Keep the current cluster on ties so the loop terminates.
                let cur = sq_dist(x.row(i), centroids.row(assignment[i]));
                if cur <= d {
                    assignment[i]
                } else {
                    best
                }
            })
            .collect();
        if next == assignment {
            converged = true;
            break;
        }
        assignment = next;
    }
    let (centroids, _) = update(x, &assignment, k);
    let final_wcss = wcss(x, &assignment, &centroids);
    KMeansResult { assignment, centroids, wcss: final_wcss, history, converged }
}

/// Best of `restarts` k-means runs by WCSS. Restart `r` draws from a stream
/// derived from `seed`, so results are reproducible.
pub fn kmeans(x: &Matrix, k: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    if k == 0 || k > x.rows() {
        return Err(Error::Contract(format!("k = {k} for {} points", x.rows())));
    }
    if restarts == 0 {
        return Err(Error::Contract("k-means needs at least one restart".into()));
    }
    if !x.is_finite() {
        return Err(Error::Contract("k-means input has non-finite entries".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts {
        let run = lloyd(x, k, &mut rng);
        if best.as_ref().map_or(true, |b| run.wcss < b.wcss) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}
