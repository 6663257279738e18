//! Clustering checked against brute-force and naive references.

use std::collections::HashMap;

use elqa_core::miners::{
    dbscan, kmeans, kmeans_traced, lloyd, KMeansParams, PointMatrix, NOISE,
};
use elqa_core::rng::StreamRng;
use proptest::prelude::*;

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// O(n²) DBSCAN reference: explicit distance matrix, union-find over cores,
/// border points to their lowest-index core neighbour.
fn naive_dbscan(rows: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<i64> {
    let n = rows.len();
    let near = |i: usize, j: usize| sq(&rows[i], &rows[j]) <= eps * eps;
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts)
        .collect();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    for i in 0..n {
        for j in 0..n {
            if core[i] && core[j] && near(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut labels = vec![NOISE; n];
    for i in 0..n {
        if core[i] {
            labels[i] = find(&mut parent, i) as i64;
        }
    }
    for i in 0..n {
        if !core[i] {
            if let Some(j) = (0..n).find(|&j| core[j] && near(i, j)) {
                labels[i] = labels[j];
            }
        }
    }
    labels
}

/// True when `a` and `b` induce the same partition and agree on noise.
fn same_partition(a: &[i64], b: &[i64]) -> bool {
    let mut fwd = HashMap::new();
    let mut back = HashMap::new();
    a.iter().zip(b).all(|(&x, &y)| {
        if (x == NOISE) != (y == NOISE) {
            return false;
        }
        if x == NOISE {
            return true;
        }
        *fwd.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x
    })
}

fn random_points(rng: &mut StreamRng, n: usize, d: usize, spread: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.uniform(0.0, spread)).collect())
        .collect()
}

fn shuffle(rng: &mut StreamRng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.below(i + 1));
    }
    p
}

fn optimal_two_partition(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len();
    let sse = |members: &[&Vec<f64>]| -> f64 {
        let d = members[0].len();
        let mut c = vec![0.0; d];
        for m in members {
            for k in 0..d {
                c[k] += m[k];
            }
        }
        c.iter_mut().for_each(|v| *v /= members.len() as f64);
        members.iter().map(|m| sq(m, &c)).sum()
    };
    let mut best = f64::INFINITY;
    // Fix row 0 in side A to skip mirrored partitions.
    for mask in 0u32..(1 << (n - 1)) {
        let mut a = vec![&rows[0]];
        let mut b = Vec::new();
        for i in 1..n {
            if mask >> (i - 1) & 1 == 1 {
                b.push(&rows[i]);
            } else {
                a.push(&rows[i]);
            }
        }
        if b.is_empty() {
            continue;
        }
        best = best.min(sse(&a) + sse(&b));
    }
    best
}

#[test]
fn dbscan_matches_naive_reference() {
    let mut rng = StreamRng::new(2024);
    for _ in 0..300 {
        let n = 1 + rng.below(50);
        let d = 1 + rng.below(3);
        let rows = random_points(&mut rng, n, d, 10.0);
        let eps = rng.uniform(0.2, 4.0);
        let min_pts = 1 + rng.below(6);
        let m = PointMatrix::from_rows(rows.clone()).unwrap();
        let got = dbscan(&m, eps, min_pts).unwrap();
        let want = naive_dbscan(&rows, eps, min_pts);
        assert!(same_partition(&got.labels, &want), "{rows:?} eps={eps} min_pts={min_pts}");
    }
}

#[test]
fn dbscan_core_status_ignores_row_order() {
    let mut rng = StreamRng::new(8);
    for _ in 0..50 {
        let n = 2 + rng.below(40);
        let rows = random_points(&mut rng, n, 2, 8.0);
        let eps = rng.uniform(0.5, 3.0);
        let min_pts = 2 + rng.below(4);
        let shuffled_perm = shuffle(&mut rng, n);
        let shuffled: Vec<Vec<f64>> = shuffled_perm.iter().map(|&i| rows[i].clone()).collect();
        let a = dbscan(&PointMatrix::from_rows(rows.clone()).unwrap(), eps, min_pts).unwrap();
        let b = dbscan(&PointMatrix::from_rows(shuffled).unwrap(), eps, min_pts).unwrap();
        for (pos, &orig) in shuffled_perm.iter().enumerate() {
            assert_eq!(a.labels[orig] == NOISE, b.labels[pos] == NOISE);
        }
    }
}

#[test]
fn kmeans_square_matches_brute_force() {
    let rows = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 0.0], vec![10.0, 1.0]];
    assert_eq!(optimal_two_partition(&rows), 1.0);
    let a = kmeans(&PointMatrix::from_rows(rows).unwrap(), 2, 0, 10, 300, 1e-9).unwrap();
    assert!((a.inertia.unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn kmeans_inertia_monotone_and_locally_optimal() {
    let mut rng = StreamRng::new(99);
    for run in 0..100u64 {
        let n = 5 + rng.below(60);
        let d = 1 + rng.below(4);
        let k = 1 + rng.below(n.min(6));
        let m = PointMatrix::from_rows(random_points(&mut rng, n, d, 20.0)).unwrap();
        let params = KMeansParams { k, seed: run, restarts: 3, ..KMeansParams::default() };
        let (best, traces) = kmeans_traced(&m, &params).unwrap();
        for t in &traces {
            for w in t.inertia_history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{:?}", t.inertia_history);
            }
        }
        let centroids = best.centroids.as_ref().unwrap();
        let labels = &best.labels;
        let total: f64 = m.rows().zip(labels).map(|(r, &l)| sq(r, &centroids[l as usize])).sum();
        assert!((total - best.inertia.unwrap()).abs() <= 1e-9 * (1.0 + total));
        for (i, row) in m.rows().enumerate() {
            let own = sq(row, &centroids[labels[i] as usize]);
            for c in centroids {
                assert!(sq(row, c) >= own - 1e-12 * (1.0 + own));
            }
        }
    }
}

#[test]
fn kmeans_best_of_ten_finds_optimum_mostly() {
    let mut rng = StreamRng::new(7);
    let mut hits = 0;
    for inst in 0..100u64 {
        let n = 2 + rng.below(7);
        let rows = random_points(&mut rng, n, 2, 10.0);
        let opt = optimal_two_partition(&rows);
        let a = kmeans(&PointMatrix::from_rows(rows).unwrap(), 2, inst, 10, 300, 1e-9).unwrap();
        if a.inertia.unwrap() <= opt * (1.0 + 1e-9) + 1e-12 {
            hits += 1;
        }
    }
    assert!(hits >= 90, "{hits}/100");
}

#[test]
fn kmeans_permutation_equivariant_from_fixed_seeds() {
    let mut rng = StreamRng::new(31);
    for _ in 0..30 {
        let n = 6 + rng.below(30);
        let k = 2 + rng.below(3);
        let rows = random_points(&mut rng, n, 2, 10.0);
        let init_rows = rng.choose_indices(n, k);
        let init: Vec<Vec<f64>> = init_rows.iter().map(|&i| rows[i].clone()).collect();
        let ids: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();

        let order = shuffle(&mut rng, n);
        let rows2: Vec<Vec<f64>> = order.iter().map(|&i| rows[i].clone()).collect();
        let ids2: Vec<String> = order.iter().map(|&i| ids[i].clone()).collect();

        let (a, _) = lloyd(&PointMatrix::new(rows, ids.clone()).unwrap(), init.clone(), 300, 1e-12);
        let (b, _) = lloyd(&PointMatrix::new(rows2, ids2.clone()).unwrap(), init, 300, 1e-12);
        let by_id_a: HashMap<&String, i64> = ids.iter().zip(&a.labels).map(|(i, &l)| (i, l)).collect();
        let relabelled: Vec<i64> = ids2.iter().map(|i| by_id_a[i]).collect();
        assert!(same_partition(&relabelled, &b.labels));
    }
}

#[test]
fn standardize_oracle() {
    let mut rng = StreamRng::new(4);
    for _ in 0..50 {
        let n = 1 + rng.below(40);
        let d = 1 + rng.below(5);
        let mut rows = random_points(&mut rng, n, d, 100.0);
        if d > 1 {
            rows.iter_mut().for_each(|r| r[1] = 3.0);
        }
        let s = PointMatrix::from_rows(rows).unwrap().standardize();
        for c in 0..d {
            let col: Vec<f64> = s.rows().map(|r| r[c]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            assert!(mean.abs() < 1e-9);
            assert!(col.iter().all(|&v| v == 0.0) || (sd - 1.0).abs() < 1e-9);
        }
    }
}

proptest! {
    #[test]
    fn clustering_is_deterministic(
        rows in prop::collection::vec(prop::collection::vec(-5f64..5.0, 2), 3..30),
        seed in any::<u64>(),
    ) {
        let m = PointMatrix::from_rows(rows).unwrap();
        let a = kmeans(&m, 2, seed, 4, 100, 1e-9).unwrap();
        let b = kmeans(&m, 2, seed, 4, 100, 1e-9).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(dbscan(&m, 1.0, 3).unwrap(), dbscan(&m, 1.0, 3).unwrap());
    }
}
