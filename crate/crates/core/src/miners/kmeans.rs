//! Lloyd's algorithm with k-means++ seeding and best-of-n restarts.

use serde::{Deserialize, Serialize};

use super::{sq_dist, ClusterAssignment, MinerError, PointMatrix};
use crate::rng::StreamRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            k: 2,
            seed: 0,
            restarts: 10,
            max_iter: 300,
            tol: 1e-9,
        }
    }
}

impl KMeansParams {
    pub fn with_k(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    fn validate(&self, n: usize) -> Result<(), MinerError> {
        if self.k < 1 || self.k > n {
            return Err(MinerError::BadK { k: self.k, n });
        }
        if !(self.tol > 0.0) {
            return Err(MinerError::BadParam(format!("tol must be positive, got {}", self.tol)));
        }
        if self.restarts < 1 {
            return Err(MinerError::BadParam("restarts must be at least 1".into()));
        }
        Ok(())
    }
}

/// What one restart did.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub seed: u64,
    /// Indices of the rows picked by k-means++.
    pub initial_rows: Vec<usize>,
    /// Inertia after each assignment step, followed by the final inertia.
    pub inertia_history: Vec<f64>,
    pub inertia: f64,
    pub iterations: usize,
}

/// Best of `restarts` seeded runs; ties keep the lowest seed.
pub fn kmeans(
    m: &PointMatrix,
    k: usize,
    seed: u64,
    restarts: usize,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterAssignment, MinerError> {
    let params = KMeansParams {
        k,
        seed,
        restarts,
        max_iter,
        tol,
    };
    kmeans_traced(m, &params).map(|(best, _)| best)
}

/// Like [`kmeans`], also returning a trace per restart.
pub fn kmeans_traced(
    m: &PointMatrix,
    params: &KMeansParams,
) -> Result<(ClusterAssignment, Vec<RunTrace>), MinerError> {
    params.validate(m.n())?;
    let mut best: Option<ClusterAssignment> = None;
    let mut traces = Vec::with_capacity(params.restarts);
    for r in 0..params.restarts {
        let seed = params.seed.wrapping_add(r as u64);
        let initial_rows = plus_plus(m, params.k, &mut StreamRng::new(seed));
        let init = initial_rows.iter().map(|&i| m.row(i).to_vec()).collect();
        let (fit, history) = lloyd(m, init, params.max_iter, params.tol);
        let inertia = fit.inertia.unwrap_or(0.0);
        traces.push(RunTrace {
            seed,
            initial_rows,
            inertia_history: history,
            inertia,
            iterations: fit.iterations.unwrap_or(0),
        });
        if best
            .as_ref()
            .is_none_or(|b| inertia < b.inertia.unwrap_or(f64::INFINITY))
        {
            best = Some(fit);
        }
    }
    Ok((best.expect("at least one restart"), traces))
}

/// k-means++ seeding: the first row uniformly, then each next row with
/// probability proportional to its squared distance to the nearest pick.
/// When every remaining row coincides with a pick, the next one is drawn
/// uniformly among unpicked rows.
fn plus_plus(m: &PointMatrix, k: usize, rng: &mut StreamRng) -> Vec<usize> {
    let n = m.n();
    let mut chosen = vec![rng.below(n)];
    let mut picked = vec![false; n];
    picked[chosen[0]] = true;
    let mut d2: Vec<f64> = m.rows().map(|r| sq_dist(r, m.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2
            .iter()
            .zip(&picked)
            .filter(|(_, &p)| !p)
            .map(|(d, _)| d)
            .sum();
        let next = if total > 0.0 {
            let target = rng.next_f64() * total;
            let mut acc = 0.0;
            let mut pick = None;
            let mut last_positive = None;
            for i in (0..n).filter(|&i| !picked[i] && d2[i] > 0.0) {
                acc += d2[i];
                last_positive = Some(i);
                if acc > target {
                    pick = Some(i);
                    break;
                }
            }
            pick.or(last_positive).expect("positive mass")
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !picked[i]).collect();
            free[rng.below(free.len())]
        };
        picked[next] = true;
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(m.row(i), m.row(next)));
        }
    }
    chosen
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn inertia(m: &PointMatrix, labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    m.rows()
        .zip(labels)
        .map(|(r, &l)| sq_dist(r, &centroids[l]))
        .sum()
}

/// Gives every empty cluster the point farthest from its own centroid,
/// taken from a cluster that keeps at least one member.
fn repair_empty(m: &PointMatrix, labels: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&l| counts[l] += 1);
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let mut far: Option<(usize, f64)> = None;
        for (i, row) in m.rows().enumerate() {
            if counts[labels[i]] < 2 {
                continue;
            }
            let d = sq_dist(row, &centroids[labels[i]]);
            if far.is_none_or(|(_, best)| d > best) {
                far = Some((i, d));
            }
        }
        // k <= n guarantees a donor cluster with two or more members.
        let (p, _) = far.expect("donor cluster");
        counts[labels[p]] -= 1;
        labels[p] = empty;
        counts[empty] = 1;
        centroids[empty] = m.row(p).to_vec();
    }
}

/// Runs Lloyd iterations from the given centroids.
///
/// Stops when no centroid moves by `tol` or more, or after `max_iter`
/// updates. Returns the assignment (labels are nearest-centroid for the
/// returned centroids) and the inertia history.
pub fn lloyd(
    m: &PointMatrix,
    initial: Vec<Vec<f64>>,
    max_iter: usize,
    tol: f64,
) -> (ClusterAssignment, Vec<f64>) {
    let k = initial.len();
    let d = m.d();
    let mut centroids = initial;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut labels = vec![0usize; m.n()];

    for it in 1..=max_iter {
        for (i, row) in m.rows().enumerate() {
            labels[i] = nearest(row, &centroids).0;
        }
        repair_empty(m, &mut labels, &mut centroids);
        history.push(inertia(m, &labels, &centroids));

        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (row, &l) in m.rows().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(row) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let mean: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&mean, &centroids[c]).sqrt());
            centroids[c] = mean;
        }
        iterations = it;
        if shift < tol {
            break;
        }
    }

    for (i, row) in m.rows().enumerate() {
        labels[i] = nearest(row, &centroids).0;
    }
    let final_inertia = inertia(m, &labels, &centroids);
    history.push(final_inertia);
    (
        ClusterAssignment {
            labels: labels.into_iter().map(|l| l as i64).collect(),
            centroids: Some(centroids),
            inertia: Some(final_inertia),
            iterations: Some(iterations),
        },
        history,
    )
}
