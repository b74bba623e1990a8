//! Ligand bond graph, protein Cα contact graph and ligand-protein cross edges.
//!
//! Protein edges use an inclusive cutoff (`<=`, default 8 Å); cross edges use
//! a strict one (`<`, default 10 Å). All distances are f64 brute-force scans.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::structio::ComplexRecord;

pub const PROTEIN_EDGE_CUTOFF: f64 = 8.0;
pub const CROSS_EDGE_CUTOFF: f64 = 10.0;

/// Undirected simple graph with node coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "GraphRepr")]
pub struct Graph {
    pub coords: Vec<Vec3>,
    /// Undirected edges with `u < v`, sorted.
    pub edges: Vec<(usize, usize)>,
    pub degree: Vec<usize>,
    #[serde(skip)]
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    pub fn new(coords: Vec<Vec3>, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let n = coords.len();
        let mut edges: Vec<(usize, usize)> = edges
            .into_iter()
            .filter(|(u, v)| u != v)
            .map(|(u, v)| (u.min(v), u.max(v)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in &edges {
            assert!(v < n, "edge ({u}, {v}) out of range for {n} nodes");
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for a in adjacency.iter_mut() {
            a.sort_unstable();
        }
        let degree = adjacency.iter().map(|a| a.len()).collect();
        Self {
            coords,
            edges,
            degree,
            adjacency,
        }
    }

    /// Topology-only graph (coordinates at the origin).
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        Self::new(vec![[0.0; 3]; n], edges)
    }

    pub fn n_nodes(&self) -> usize {
        self.degree.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency.get(u).is_some_and(|a| a.binary_search(&v).is_ok())
    }

    /// Both orientations of every edge as `(target, source)` pairs, grouped
    /// by target in ascending order.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(2 * self.edges.len());
        for (i, nb) in self.adjacency.iter().enumerate() {
            for &k in nb {
                out.push((i, k));
            }
        }
        out
    }

    /// Subgraph induced by `nodes` (relabelled `0..nodes.len()` in order).
    pub fn induced(&self, nodes: &[usize]) -> Graph {
        let mut pos = vec![usize::MAX; self.n_nodes()];
        for (k, &v) in nodes.iter().enumerate() {
            pos[v] = k;
        }
        let edges = self
            .edges
            .iter()
            .filter(|(u, v)| pos[*u] != usize::MAX && pos[*v] != usize::MAX)
            .map(|(u, v)| (pos[*u], pos[*v]));
        Graph::new(nodes.iter().map(|&v| self.coords[v]).collect(), edges)
    }

}

#[derive(Deserialize)]
struct GraphRepr {
    coords: Vec<Vec3>,
    edges: Vec<(usize, usize)>,
}

impl From<GraphRepr> for Graph {
    fn from(r: GraphRepr) -> Self {
        Graph::new(r.coords, r.edges)
    }
}

/// Parse a standalone graph: either JSON `{"coords": [...], "edges": [...]}`
/// (or `{"n_nodes": n, "edges": [...]}`), or text with a `nodes <n>` line
/// followed by one `u v` pair per line. `#` starts a comment.
pub fn parse_graph(text: &str) -> Result<Graph> {
    let bad = |line: usize, message: String| Error::Parse {
        location: format!("line {line}"),
        message,
    };
    let check = |n: usize, edges: &[(usize, usize)]| -> Result<()> {
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Validation(format!("edge ({u}, {v}) out of range for {n} nodes")));
            }
            if u == v {
                return Err(Error::Validation(format!("self-loop on node {u}")));
            }
        }
        Ok(())
    };
    if text.trim_start().starts_with('{') {
        #[derive(Deserialize)]
        struct Doc {
            coords: Option<Vec<Vec3>>,
            n_nodes: Option<usize>,
            edges: Vec<(usize, usize)>,
        }
        let doc: Doc = serde_json::from_str(text)?;
        let coords = match (doc.coords, doc.n_nodes) {
            (Some(c), None) => c,
            (Some(c), Some(n)) if c.len() == n => c,
            (None, Some(n)) => vec![[0.0; 3]; n],
            _ => return Err(Error::Validation("graph needs `coords` or a matching `n_nodes`".into())),
        };
        check(coords.len(), &doc.edges)?;
        return Ok(Graph::new(coords, doc.edges));
    }
    let mut n = None;
    let mut edges = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["nodes", c] if n.is_none() => {
                n = Some(c.parse::<usize>().map_err(|e| bad(k + 1, format!("node count: {e}")))?);
            }
            [u, v] if n.is_some() => {
                let p = |s: &str| s.parse::<usize>().map_err(|e| bad(k + 1, format!("node id `{s}`: {e}")));
                edges.push((p(u)?, p(v)?));
            }
            _ => return Err(bad(k + 1, format!("expected `nodes <n>` then `u v` lines, got `{line}`"))),
        }
    }
    let n = n.ok_or_else(|| bad(1, "missing `nodes <n>` line".into()))?;
    check(n, &edges)?;
    Ok(Graph::from_edges(n, edges))
}

pub fn build_ligand_graph(record: &ComplexRecord) -> Graph {
    Graph::new(record.ligand_coords(), record.ligand_bonds.iter().map(|b| (b.i, b.j)))
}

pub fn build_protein_graph(record: &ComplexRecord, cutoff: f64) -> Graph {
    protein_graph_from_coords(record.ca_coords(), cutoff)
}

pub fn protein_graph_from_coords(ca: Vec<Vec3>, cutoff: f64) -> Graph {
    let c2 = cutoff * cutoff;
    let mut edges = Vec::new();
    for i in 0..ca.len() {
        for j in i + 1..ca.len() {
            if geom::dist2(ca[i], ca[j]) <= c2 {
                edges.push((i, j));
            }
        }
    }
    Graph::new(ca, edges)
}

/// Ligand-atom to residue pairs strictly closer than the cutoff.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CrossEdges {
    /// `(ligand atom, residue)`, sorted.
    pub pairs: Vec<(usize, usize)>,
}

impl CrossEdges {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn cross_edges_from_coords(ligand: &[Vec3], protein: &[Vec3], cutoff: f64) -> CrossEdges {
    let c2 = cutoff * cutoff;
    let mut pairs = Vec::new();
    for (i, a) in ligand.iter().enumerate() {
        for (j, r) in protein.iter().enumerate() {
            if geom::dist2(*a, *r) < c2 {
                pairs.push((i, j));
            }
        }
    }
    CrossEdges { pairs }
}

pub fn build_cross_edges(record: &ComplexRecord, cutoff: f64) -> CrossEdges {
    cross_edges_from_coords(&record.ligand_coords(), &record.ca_coords(), cutoff)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexGraph {
    pub ligand: Graph,
    pub protein: Graph,
    pub cross: CrossEdges,
}

impl ComplexGraph {
    pub fn build(record: &ComplexRecord, protein_cutoff: f64, cross_cutoff: f64) -> Self {
        Self {
            ligand: build_ligand_graph(record),
            protein: build_protein_graph(record, protein_cutoff),
            cross: build_cross_edges(record, cross_cutoff),
        }
    }

    /// JSON dump of nodes, edges and degrees.
    pub fn to_json(&self) -> serde_json::Value {
        let side = |g: &Graph| {
            serde_json::json!({
                "n_nodes": g.n_nodes(),
                "coords": g.coords,
                "edges": g.edges,
                "degree": g.degree,
            })
        };
        serde_json::json!({
            "ligand": side(&self.ligand),
            "protein": side(&self.protein),
            "cross": self.cross.pairs,
        })
    }
}
