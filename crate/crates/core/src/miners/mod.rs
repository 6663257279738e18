//! Clustering over feature vectors.
//!
//! All analysers take a [`PointMatrix`] and return a [`ClusterAssignment`].
//! Distances are Euclidean; callers standardize first when features live on
//! different scales.

mod analyser;
mod dbscan;
mod kmeans;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use analyser::{analyse, Analyser, AnalyserDescriptor, AnalyserRegistry, DbscanAnalyser, KMeansAnalyser};
pub use dbscan::dbscan;
pub use kmeans::{kmeans, kmeans_traced, lloyd, KMeansParams, RunTrace};

/// Label used for DBSCAN noise points.
pub const NOISE: i64 = -1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MinerError {
    #[error("row {row} has {got} columns, expected {expected}")]
    NotRectangular { row: usize, expected: usize, got: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("{ids} ids for {rows} rows")]
    IdCount { ids: usize, rows: usize },
    #[error("k = {k} outside 1..={n}")]
    BadK { k: usize, n: usize },
    #[error("bad parameter: {0}")]
    BadParam(String),
    #[error("unknown analyser method {0:?}")]
    UnknownMethod(String),
}

impl MinerError {
    pub fn code(&self) -> &'static str {
        match self {
            MinerError::NotRectangular { .. } => "NotRectangular",
            MinerError::NonFinite { .. } => "NonFinite",
            MinerError::DuplicateId(_) => "DuplicateId",
            MinerError::IdCount { .. } => "IdCount",
            MinerError::BadK { .. } => "BadK",
            MinerError::BadParam(_) => "BadParam",
            MinerError::UnknownMethod(_) => "UnknownMethod",
        }
    }
}

/// `n` points with `d` finite features each, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMatrix {
    data: Vec<f64>,
    n: usize,
    d: usize,
    ids: Vec<String>,
}

impl PointMatrix {
    pub fn new(rows: Vec<Vec<f64>>, ids: Vec<String>) -> Result<Self, MinerError> {
        if ids.len() != rows.len() {
            return Err(MinerError::IdCount {
                ids: ids.len(),
                rows: rows.len(),
            });
        }
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * d);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(MinerError::NotRectangular {
                    row: r,
                    expected: d,
                    got: row.len(),
                });
            }
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(MinerError::NonFinite { row: r, col: c });
            }
            data.extend_from_slice(row);
        }
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(MinerError::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            data,
            n: rows.len(),
            d,
            ids,
        })
    }

    /// Rows with generated ids `"0"`, `"1"`, …
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, MinerError> {
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        Self::new(rows, ids)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics; a zero-width matrix still has n empty rows.
        (0..self.n).map(move |i| self.row(i))
    }

    /// Per-column z-scores with population standard deviation. Columns with
    /// zero variance become all zeros.
    pub fn standardize(&self) -> PointMatrix {
        let mut out = self.clone();
        if self.n == 0 {
            return out;
        }
        let n = self.n as f64;
        for c in 0..self.d {
            let mean = self.rows().map(|r| r[c]).sum::<f64>() / n;
            let var = self.rows().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            for i in 0..self.n {
                let v = &mut out.data[i * self.d + c];
                *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
            }
        }
        out
    }
}

pub fn standardize(m: &PointMatrix) -> PointMatrix {
    m.standardize()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Cluster id per row, or [`NOISE`].
    pub labels: Vec<i64>,
    /// Row-major `k × d` centroids, when the method produces them.
    pub centroids: Option<Vec<Vec<f64>>>,
    pub inertia: Option<f64>,
    pub iterations: Option<usize>,
}

impl ClusterAssignment {
    pub fn n_clusters(&self) -> usize {
        match &self.centroids {
            Some(c) => c.len(),
            None => self.labels.iter().filter(|&&l| l >= 0).map(|&l| l as usize + 1).max().unwrap_or(0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_ragged_and_non_finite() {
        assert!(matches!(
            PointMatrix::from_rows(vec![vec![1.0, 2.0], vec![1.0]]),
            Err(MinerError::NotRectangular { row: 1, .. })
        ));
        assert!(matches!(
            PointMatrix::from_rows(vec![vec![f64::NAN]]),
            Err(MinerError::NonFinite { row: 0, col: 0 })
        ));
        assert!(matches!(
            PointMatrix::new(vec![vec![1.0], vec![2.0]], vec!["a".into(), "a".into()]),
            Err(MinerError::DuplicateId(_))
        ));
    }

    #[test]
    fn standardize_columns() {
        let m = PointMatrix::from_rows(vec![vec![1.0, 0.0], vec![1.0, 2.0]]).unwrap();
        let s = m.standardize();
        assert_eq!(s.row(0), [0.0, -1.0]);
        assert_eq!(s.row(1), [0.0, 1.0]);
    }
}
