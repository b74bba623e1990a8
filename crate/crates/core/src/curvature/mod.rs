//! Ollivier-Ricci curvature of unweighted graphs and the per-node Local
//! Curvature Feature (min, max, mean, population std, median of the
//! curvatures of incident edges).
//!
//! The measure at a node is uniform over its one-hop neighbourhood (no mass
//! stays on the node). Transport costs are hop distances in the whole graph.

mod transport;

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::molgraph::Graph;

pub use transport::transport_cost;

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborMeasure {
    pub support: Vec<usize>,
    pub mass: Vec<f64>,
}

pub fn neighbor_measure(graph: &Graph, node: usize) -> Result<NeighborMeasure> {
    let support = graph.neighbors(node).to_vec();
    if support.is_empty() {
        return Err(Error::UndefinedMeasure(node));
    }
    let m = 1.0 / support.len() as f64;
    Ok(NeighborMeasure {
        mass: vec![m; support.len()],
        support,
    })
}

/// BFS hop counts from `from` to every node (`usize::MAX` when unreachable).
fn bfs(graph: &Graph, from: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; graph.n_nodes()];
    let mut queue = VecDeque::from([from]);
    dist[from] = 0;
    while let Some(v) = queue.pop_front() {
        for &w in graph.neighbors(v) {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

/// `|S| x |T|` shortest-path hop counts.
pub fn local_distances(graph: &Graph, sources: &[usize], targets: &[usize]) -> Result<Vec<Vec<f64>>> {
    sources
        .iter()
        .map(|&s| {
            let d = bfs(graph, s);
            targets
                .iter()
                .map(|&t| {
                    if d[t] == usize::MAX {
                        Err(Error::Unreachable(s, t))
                    } else {
                        Ok(d[t] as f64)
                    }
                })
                .collect()
        })
        .collect()
}

/// Wasserstein-1 distance between two measures under a cost matrix indexed
/// by their supports.
pub fn wasserstein1(mu: &NeighborMeasure, nu: &NeighborMeasure, cost: &[Vec<f64>]) -> Result<f64> {
    let (a, b): (f64, f64) = (mu.mass.iter().sum(), nu.mass.iter().sum());
    if (a - 1.0).abs() > 1e-9 || (b - 1.0).abs() > 1e-9 {
        return Err(Error::Infeasible(format!("measures must sum to 1, got {a} and {b}")));
    }
    transport_cost(&mu.mass, &nu.mass, cost)
}

/// Ollivier-Ricci curvature `1 - W1(m_u, m_v)` of the edge `(u, v)`.
///
/// Masses are scaled to integers (`deg(v)` units per neighbour of `u`,
/// `deg(u)` per neighbour of `v`) so the solve is exact; the cost is divided
/// by `deg(u) * deg(v)` afterwards.
pub fn edge_curvature(graph: &Graph, u: usize, v: usize) -> Result<f64> {
    if !graph.has_edge(u, v) {
        return Err(Error::NotAdjacent(u, v));
    }
    let (nu_, nv_) = (graph.neighbors(u), graph.neighbors(v));
    let (du, dv) = (nu_.len() as f64, nv_.len() as f64);
    let cost = local_distances(graph, nu_, nv_)?;
    let w = transport_cost(&vec![dv; nu_.len()], &vec![du; nv_.len()], &cost)?;
    Ok(1.0 - w / (du * dv))
}

/// Curvature of every edge, keyed by `(min, max)` endpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurvatureMap {
    values: BTreeMap<(usize, usize), f64>,
}

impl CurvatureMap {
    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        self.values.get(&(u.min(v), u.max(v))).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.values.iter().map(|(k, v)| (*k, *v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn graph_curvature(graph: &Graph) -> Result<CurvatureMap> {
    let mut values = BTreeMap::new();
    for &(u, v) in &graph.edges {
        values.insert((u, v), edge_curvature(graph, u, v)?);
    }
    Ok(CurvatureMap { values })
}

/// `[min, max, mean, std, median]` of a node's incident-edge curvatures.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LcfVector(pub [f64; 5]);

impl LcfVector {
    pub const WIDTH: usize = 5;

    pub fn min(&self) -> f64 {
        self.0[0]
    }
    pub fn max(&self) -> f64 {
        self.0[1]
    }
    pub fn mean(&self) -> f64 {
        self.0[2]
    }
    pub fn std(&self) -> f64 {
        self.0[3]
    }
    pub fn median(&self) -> f64 {
        self.0[4]
    }

    /// Statistics of a multiset; the empty multiset maps to zeros.
    pub fn from_values(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let mut s = values.to_vec();
        s.sort_by(|a, b| a.total_cmp(b));
        let n = s.len();
        let mean = s.iter().sum::<f64>() / n as f64;
        let var = s.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            s[n / 2]
        } else {
            0.5 * (s[n / 2 - 1] + s[n / 2])
        };
        // clamp mean into [min, max] against rounding in the sum
        let mean = mean.clamp(s[0], s[n - 1]);
        Self([s[0], s[n - 1], mean, var.sqrt(), median])
    }
}

pub fn node_lcf(graph: &Graph, curvature: &CurvatureMap, v: usize) -> LcfVector {
    let cms: Vec<f64> = graph
        .neighbors(v)
        .iter()
        .map(|&u| curvature.get(u, v).expect("curvature of incident edge"))
        .collect();
    LcfVector::from_values(&cms)
}

/// LCF of every node; each edge curvature is solved once.
pub fn graph_lcf(graph: &Graph) -> Result<Vec<LcfVector>> {
    let kappa = graph_curvature(graph)?;
    Ok((0..graph.n_nodes()).map(|v| node_lcf(graph, &kappa, v)).collect())
}
