//! Density-based clustering with a deterministic border rule.
//!
//! A point's neighbourhood includes itself; a point is core when its
//! neighbourhood holds at least `min_pts` points. Clusters are the connected
//! components of core points, numbered in the order their lowest-index core
//! point appears. A non-core point within `eps` of some core point joins the
//! cluster of the lowest-index such core point; everything else is noise.

use super::{sq_dist, ClusterAssignment, MinerError, PointMatrix, NOISE};

/// Neighbour lists via a sweep over the first coordinate.
fn neighbourhoods(m: &PointMatrix, eps: f64) -> Vec<Vec<usize>> {
    let n = m.n();
    let eps2 = eps * eps;
    if m.d() == 0 {
        return vec![(0..n).collect(); n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| m.row(a)[0].total_cmp(&m.row(b)[0]).then(a.cmp(&b)));
    let keys: Vec<f64> = order.iter().map(|&i| m.row(i)[0]).collect();
    // Slightly wider window so rounding in the squared distance cannot
    // admit a point the projection filter has dropped.
    let reach = eps * (1.0 + 1e-9);

    let mut out = vec![Vec::new(); n];
    for (pos, &i) in order.iter().enumerate() {
        let x = keys[pos];
        let lo = keys.partition_point(|&k| k < x - reach);
        let hi = keys.partition_point(|&k| k <= x + reach);
        let row = m.row(i);
        let mut list: Vec<usize> = order[lo..hi]
            .iter()
            .copied()
            .filter(|&j| sq_dist(row, m.row(j)) <= eps2)
            .collect();
        list.sort_unstable();
        out[i] = list;
    }
    out
}

pub fn dbscan(m: &PointMatrix, eps: f64, min_pts: usize) -> Result<ClusterAssignment, MinerError> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(MinerError::BadParam(format!("eps must be positive, got {eps}")));
    }
    if min_pts == 0 {
        return Err(MinerError::BadParam("min_pts must be at least 1".into()));
    }
    let n = m.n();
    let hood = neighbourhoods(m, eps);
    let core: Vec<bool> = hood.iter().map(|h| h.len() >= min_pts).collect();

    let mut labels = vec![NOISE; n];
    let mut next_id = 0;
    let mut stack = Vec::new();
    for start in 0..n {
        if !core[start] || labels[start] != NOISE {
            continue;
        }
        labels[start] = next_id;
        stack.push(start);
        while let Some(p) = stack.pop() {
            for &q in &hood[p] {
                if core[q] && labels[q] == NOISE {
                    labels[q] = next_id;
                    stack.push(q);
                }
            }
        }
        next_id += 1;
    }
    for i in 0..n {
        if core[i] {
            continue;
        }
        // Neighbour lists are sorted, so the first core hit has the lowest index.
        if let Some(&q) = hood[i].iter().find(|&&q| core[q]) {
            labels[i] = labels[q];
        }
    }
    Ok(ClusterAssignment {
        labels,
        centroids: None,
        inertia: None,
        iterations: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> PointMatrix {
        PointMatrix::from_rows(xs.iter().map(|&x| vec![x]).collect()).unwrap()
    }

    #[test]
    fn chain_is_one_cluster() {
        let a = dbscan(&line(&[0.0, 1.0, 2.0]), 1.5, 2).unwrap();
        assert_eq!(a.labels, [0, 0, 0]);
    }

    #[test]
    fn isolated_point_is_noise() {
        let a = dbscan(&line(&[0.0]), 1.0, 2).unwrap();
        assert_eq!(a.labels, [NOISE]);
        let a = dbscan(&line(&[0.0]), 1.0, 1).unwrap();
        assert_eq!(a.labels, [0]);
    }

    #[test]
    fn separated_groups_numbered_by_index() {
        let a = dbscan(&line(&[100.0, 0.0, 100.5, 0.5]), 1.0, 2).unwrap();
        assert_eq!(a.labels, [0, 1, 0, 1]);
    }

    #[test]
    fn border_goes_to_lowest_core() {
        // Cluster A = {0.0, 0.1, 0.2, 0.3} starts at row 0, cluster B =
        // {2.2, .., 2.5} at row 1. Row 2 (1.25) is a border point reached by
        // row 5 (0.3, in A) and row 1 (2.2, in B); row 1 is lower, so B wins
        // even though A is discovered first.
        let m = line(&[0.0, 2.2, 1.25, 0.1, 0.2, 0.3, 2.3, 2.4, 2.5]);
        let a = dbscan(&m, 1.0, 4).unwrap();
        assert_eq!(a.labels, [0, 1, 1, 0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn bad_params() {
        assert!(matches!(dbscan(&line(&[0.0]), 0.0, 1), Err(MinerError::BadParam(_))));
        assert!(matches!(dbscan(&line(&[0.0]), 1.0, 0), Err(MinerError::BadParam(_))));
    }
}
