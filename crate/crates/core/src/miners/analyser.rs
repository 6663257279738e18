//! Pluggable analyser interface and the descriptor-based dispatcher.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{dbscan, kmeans_traced, ClusterAssignment, KMeansParams, MinerError, PointMatrix};

/// Names a method and carries its parameters, e.g.
/// `{"method": "dbscan", "params": {"eps": 1.5, "min_pts": 2}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyserDescriptor {
    pub method: String,
    #[serde(default)]
    pub params: Value,
}

impl AnalyserDescriptor {
    pub fn new(method: impl Into<String>, params: Value) -> Self {
        Self {
            method: method.into(),
            params,
        }
    }
}

pub trait Analyser: Send + Sync {
    fn name(&self) -> &str;
    fn analyse(&self, m: &PointMatrix, params: &Value) -> Result<ClusterAssignment, MinerError>;
}

fn params<T: for<'de> Deserialize<'de>>(method: &str, v: &Value) -> Result<T, MinerError> {
    let v = if v.is_null() { Value::Object(Default::default()) } else { v.clone() };
    serde_json::from_value(v).map_err(|e| MinerError::BadParam(format!("{method}: {e}")))
}

pub struct KMeansAnalyser;

impl Analyser for KMeansAnalyser {
    fn name(&self) -> &str {
        "kmeans"
    }

    fn analyse(&self, m: &PointMatrix, v: &Value) -> Result<ClusterAssignment, MinerError> {
        if v.get("k").is_none() {
            return Err(MinerError::BadParam("kmeans: missing field `k`".into()));
        }
        let p: KMeansParams = params("kmeans", v)?;
        kmeans_traced(m, &p).map(|(a, _)| a)
    }
}

pub struct DbscanAnalyser;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DbscanParams {
    eps: f64,
    min_pts: usize,
}

impl Analyser for DbscanAnalyser {
    fn name(&self) -> &str {
        "dbscan"
    }

    fn analyse(&self, m: &PointMatrix, v: &Value) -> Result<ClusterAssignment, MinerError> {
        let p: DbscanParams = params("dbscan", v)?;
        dbscan(m, p.eps, p.min_pts)
    }
}

/// Method name to analyser. Further methods register here.
pub struct AnalyserRegistry {
    analysers: BTreeMap<String, Box<dyn Analyser>>,
}

impl Default for AnalyserRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(KMeansAnalyser));
        r.register(Box::new(DbscanAnalyser));
        r
    }
}

impl AnalyserRegistry {
    pub fn empty() -> Self {
        Self {
            analysers: BTreeMap::new(),
        }
    }

    /// Adds or replaces the analyser under its name.
    pub fn register(&mut self, analyser: Box<dyn Analyser>) {
        self.analysers.insert(analyser.name().to_string(), analyser);
    }

    pub fn methods(&self) -> impl Iterator<Item = &str> {
        self.analysers.keys().map(String::as_str)
    }

    pub fn analyse(
        &self,
        m: &PointMatrix,
        descriptor: &AnalyserDescriptor,
    ) -> Result<ClusterAssignment, MinerError> {
        let analyser = self
            .analysers
            .get(&descriptor.method)
            .ok_or_else(|| MinerError::UnknownMethod(descriptor.method.clone()))?;
        analyser.analyse(m, &descriptor.params)
    }
}

/// Dispatches to one of the built-in analysers.
pub fn analyse(m: &PointMatrix, descriptor: &AnalyserDescriptor) -> Result<ClusterAssignment, MinerError> {
    AnalyserRegistry::default().analyse(m, descriptor)
}
