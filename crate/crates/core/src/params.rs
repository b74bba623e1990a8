//! Named parameter tensors and the affine/MLP building blocks used by every
//! learned component.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::tape::{Gradients, Tape, Tensor, Var};

/// Parameter tree keyed by dotted path, e.g. `dock.layer0.lig.ind.phi_x.l1.w`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        assert!(!self.tensors.contains_key(&name), "duplicate parameter {name}");
        self.tensors.insert(name, t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(t.rows, t.cols)))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.is_finite())
    }
}

/// Declares parameters with a seeded initializer.
pub struct Init<'a, R: Rng> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut R,
}

impl<R: Rng> Init<'_, R> {
    pub fn normal(&mut self, name: &str, rows: usize, cols: usize, std: f64) {
        let dist = Normal::new(0.0, std).expect("valid std");
        let data = (0..rows * cols).map(|_| dist.sample(self.rng)).collect();
        self.store.insert(name, Tensor::from_vec(rows, cols, data));
    }

    pub fn constant(&mut self, name: &str, rows: usize, cols: usize, v: f64) {
        self.store.insert(name, Tensor::filled(rows, cols, v));
    }

    /// `w [d_in, d_out]` with std `gain / sqrt(d_in)` and zero bias.
    pub fn linear(&mut self, prefix: &str, d_in: usize, d_out: usize, gain: f64) {
        self.normal(&format!("{prefix}.w"), d_in, d_out, gain / (d_in as f64).sqrt());
        self.constant(&format!("{prefix}.b"), 1, d_out, 0.0);
    }

    /// Two affine layers with SiLU between; hidden width = input width.
    /// `out_gain` scales the second layer (small values start a residual
    /// branch or coordinate gate near zero).
    pub fn mlp(&mut self, prefix: &str, d_in: usize, d_out: usize, out_gain: f64) {
        self.linear(&format!("{prefix}.l0"), d_in, d_in, 1.0);
        self.linear(&format!("{prefix}.l1"), d_in, d_out, out_gain);
    }

    pub fn layer_norm(&mut self, prefix: &str, d: usize) {
        self.constant(&format!("{prefix}.g"), 1, d, 1.0);
        self.constant(&format!("{prefix}.b"), 1, d, 0.0);
    }
}

/// One block of columns of an edge-level MLP input.
pub enum Part<'i> {
    /// Node rows, gathered to edges through the index.
    Node(Var, &'i Arc<[usize]>),
    /// Rows already indexed by edge.
    Edge(Var),
}

/// Forward-pass context: a tape plus lazily bound parameter leaves.
pub struct Ctx<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: FxHashMap<String, Var>,
    /// Parameters are recorded as differentiable leaves only when set.
    track: bool,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore, track: bool) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: FxHashMap::default(),
            track,
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn p(&mut self, name: &str) -> Var {
        if let Some(v) = self.bound.get(name) {
            return *v;
        }
        let t = self
            .store
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .clone();
        let v = if self.track {
            self.tape.leaf(t)
        } else {
            self.tape.constant(t)
        };
        self.bound.insert(name.to_string(), v);
        v
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    pub fn linear(&mut self, prefix: &str, x: Var) -> Var {
        let w = self.p(&format!("{prefix}.w"));
        let b = self.p(&format!("{prefix}.b"));
        let y = self.tape.matmul(x, w);
        self.tape.add_row(y, b)
    }

    pub fn mlp(&mut self, prefix: &str, x: Var) -> Var {
        let h = self.linear(&format!("{prefix}.l0"), x);
        let h = self.tape.silu(h);
        self.linear(&format!("{prefix}.l1"), h)
    }

    /// `mlp(prefix, [p_0 | p_1 | ...])` where node parts are projected by
    /// their slice of the first weight before being gathered to edges.
    pub fn mlp_split(&mut self, prefix: &str, parts: &[Part<'_>]) -> Var {
        let w = self.p(&format!("{prefix}.l0.w"));
        let b = self.p(&format!("{prefix}.l0.b"));
        let mut offset = 0;
        let mut acc: Option<Var> = None;
        for part in parts {
            let (x, idx) = match part {
                Part::Node(x, idx) => (*x, Some(*idx)),
                Part::Edge(x) => (*x, None),
            };
            let width = self.value(x).cols;
            let ws = self.tape.slice_rows(w, offset, width);
            offset += width;
            let mut y = self.tape.matmul(x, ws);
            if let Some(idx) = idx {
                y = self.tape.gather(y, idx);
            }
            acc = Some(match acc {
                None => y,
                Some(a) => self.tape.add(a, y),
            });
        }
        assert_eq!(offset, self.value(w).rows, "{prefix}: input width");
        let h = self.tape.add_row(acc.expect("at least one part"), b);
        let h = self.tape.silu(h);
        self.linear(&format!("{prefix}.l1"), h)
    }

    pub fn layer_norm(&mut self, prefix: &str, x: Var) -> Var {
        let n = self.tape.layer_norm(x, 1e-5);
        let g = self.p(&format!("{prefix}.g"));
        let b = self.p(&format!("{prefix}.b"));
        let y = self.tape.mul_row(n, g);
        self.tape.add_row(y, b)
    }

    /// Reverse sweep; returns gradients for every parameter bound on this
    /// tape (unbound parameters get no entry).
    pub fn param_grads(&self, loss: Var) -> BTreeMap<String, Tensor> {
        let mut g: Gradients = self.tape.backward(loss);
        let mut out = BTreeMap::new();
        for (name, v) in &self.bound {
            let t = self.store.get(name).expect("bound parameter");
            let grad = g.take(*v).unwrap_or_else(|| Tensor::zeros(t.rows, t.cols));
            out.insert(name.clone(), grad);
        }
        out
    }
}
