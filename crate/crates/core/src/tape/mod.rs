//! Reverse-mode differentiation over dense f64 matrices.
//!
//! A [`Tape`] records every operation of a forward pass; [`Tape::backward`]
//! walks it in reverse and accumulates adjoints. Index lists for gathers and
//! scatters are shared as `Arc<[usize]>` so repeated use costs nothing.

mod tensor;

use std::sync::Arc;

pub use tensor::{gemm, gemm_nt, gemm_tn, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Silu,
    Sigmoid,
    Exp,
    Ln,
    Sqrt,
    Square,
    Recip,
    /// Clamp to `[lo, hi]`; zero gradient outside.
    Clamp(f64, f64),
    /// `x^p` for `x >= 0`.
    Pow(f64),
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Unary(Var, Unary),
    HuberNorm(Var, f64),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Gather(Var, Arc<[usize]>),
    ScatterAdd(Var, Arc<[usize]>),
    RowSum(Var),
    ColSum(Var),
    SumAll(Var),
    LayerNorm(Var, Vec<f64>),
    RowSoftmax(Var),
    SegmentSoftmax(Var, Arc<[usize]>, usize),
    Opm {
        a: Var,
        b: Var,
        w: Var,
        bias: Var,
        u: Tensor,
    },
    PairColumn {
        z: Var,
        col: usize,
        n: usize,
        m: usize,
        transpose: bool,
    },
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Differentiable input (parameters, or inputs under gradient checking).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols, bv.rows, "matmul inner dims");
        let mut out = Tensor::zeros(av.rows, bv.cols);
        gemm(&av.data, &bv.data, &mut out.data, av.rows, av.cols, bv.cols, false);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::MatMul(a, b), rg)
    }

    /// `a @ b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols, bv.cols, "matmul_nt inner dims");
        let mut out = Tensor::zeros(av.rows, bv.rows);
        gemm_nt(&av.data, &bv.data, &mut out.data, av.rows, av.cols, bv.rows);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::MatMulNT(a, b), rg)
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shapes");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| f(*x, *y)).collect();
        Tensor::from_vec(av.rows, av.cols, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Mul(a, b), rg)
    }

    /// `a [n,m] + b [1,m]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(bv.rows == 1 && bv.cols == av.cols, "add_row shapes");
        let mut out = av.clone();
        for r in 0..out.rows {
            for (o, x) in out.row_mut(r).iter_mut().zip(&bv.data) {
                *o += x;
            }
        }
        let rg = self.rg(&[a, b]);
        self.push(out, Op::AddRow(a, b), rg)
    }

    /// `a [n,m] * g [1,m]` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, g: Var) -> Var {
        let (av, gv) = (self.value(a), self.value(g));
        assert!(gv.rows == 1 && gv.cols == av.cols, "mul_row shapes");
        let mut out = av.clone();
        for r in 0..out.rows {
            for (o, x) in out.row_mut(r).iter_mut().zip(&gv.data) {
                *o *= x;
            }
        }
        let rg = self.rg(&[a, g]);
        self.push(out, Op::MulRow(a, g), rg)
    }

    /// `a [n,m] * c [n,1]` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Var {
        let (av, cv) = (self.value(a), self.value(c));
        assert!(cv.cols == 1 && cv.rows == av.rows, "mul_col shapes");
        let mut out = av.clone();
        for r in 0..out.rows {
            let s = cv.data[r];
            out.row_mut(r).iter_mut().for_each(|o| *o *= s);
        }
        let rg = self.rg(&[a, c]);
        self.push(out, Op::MulCol(a, c), rg)
    }

    /// `a * s` with `s` a `1x1` node.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.value(s).item();
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|o| *o *= sv);
        let rg = self.rg(&[a, s]);
        self.push(out, Op::MulScalar(a, s), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|o| *o *= c);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|o| *o += c);
        let rg = self.rg(&[a]);
        self.push(out, Op::AddConst(a), rg)
    }

    pub fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let mut out = self.value(a).clone();
        for x in out.data.iter_mut() {
            *x = match kind {
                Unary::Silu => *x * sigmoid(*x),
                Unary::Sigmoid => sigmoid(*x),
                Unary::Exp => x.exp(),
                Unary::Ln => x.ln(),
                Unary::Sqrt => x.sqrt(),
                Unary::Square => *x * *x,
                Unary::Recip => 1.0 / *x,
                Unary::Clamp(lo, hi) => x.clamp(lo, hi),
                Unary::Pow(p) => x.powf(p),
            };
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::Unary(a, kind), rg)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Silu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Ln)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sqrt)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }

    /// Row-wise Huber penalty of the Euclidean norm: `[n,k] -> [n,1]`.
    pub fn huber_norm(&mut self, diff: Var, delta: f64) -> Var {
        let dv = self.value(diff);
        let mut out = Tensor::zeros(dv.rows, 1);
        for r in 0..dv.rows {
            let e = dv.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            out.data[r] = huber(e, delta);
        }
        let rg = self.rg(&[diff]);
        self.push(out, Op::HuberNorm(diff, delta), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.rows, rows, "concat row counts");
            for r in 0..rows {
                out.data[r * cols + off..r * cols + off + pv.cols].copy_from_slice(pv.row(r));
            }
            off += pv.cols;
        }
        let rg = self.rg(parts);
        self.push(out, Op::Concat(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols, "slice_cols bounds");
        let mut out = Tensor::zeros(av.rows, len);
        for r in 0..av.rows {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::SliceCols(a, start), rg)
    }

    /// Rows `start..start + len` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.rows, "slice_rows out of range");
        let c = av.cols;
        let out = Tensor::from_vec(len, c, av.data[start * c..(start + len) * c].to_vec());
        let rg = self.rg(&[a]);
        self.push(out, Op::SliceRows(a, start), rg)
    }

    /// Row gather: `out[e] = a[idx[e]]`.
    pub fn gather(&mut self, a: Var, idx: &Arc<[usize]>) -> Var {
        let av = self.value(a);
        let mut out = Tensor::zeros(idx.len(), av.cols);
        for (e, &i) in idx.iter().enumerate() {
            out.row_mut(e).copy_from_slice(av.row(i));
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::Gather(a, idx.clone()), rg)
    }

    /// Row scatter-add: `out[idx[e]] += a[e]`, `out` has `n` rows.
    pub fn scatter_add(&mut self, a: Var, idx: &Arc<[usize]>, n: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows, idx.len(), "scatter_add index length");
        let mut out = Tensor::zeros(n, av.cols);
        for (e, &i) in idx.iter().enumerate() {
            for (o, x) in out.row_mut(i).iter_mut().zip(av.row(e)) {
                *o += x;
            }
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::ScatterAdd(a, idx.clone()), rg)
    }

    /// `[n,m] -> [n,1]`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = (0..av.rows).map(|r| av.row(r).iter().sum()).collect();
        let out = Tensor::from_vec(av.rows, 1, data);
        let rg = self.rg(&[a]);
        self.push(out, Op::RowSum(a), rg)
    }

    /// `[n,m] -> [1,m]`.
    pub fn col_sum(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Tensor::zeros(1, av.cols);
        for r in 0..av.rows {
            for (o, x) in out.data.iter_mut().zip(av.row(r)) {
                *o += x;
            }
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::ColSum(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Row-wise standardization without affine parameters.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let av = self.value(a);
        let mut out = av.clone();
        let mut inv = Vec::with_capacity(av.rows);
        let m = av.cols as f64;
        for r in 0..av.rows {
            let row = out.row_mut(r);
            let mean = row.iter().sum::<f64>() / m;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m;
            let is = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|x| *x = (*x - mean) * is);
            inv.push(is);
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::LayerNorm(a, inv), rg)
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            softmax_in_place(out.row_mut(r));
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::RowSoftmax(a), rg)
    }

    /// Softmax of a column vector `[E,1]` within segments `seg[e] < nseg`.
    pub fn segment_softmax(&mut self, a: Var, seg: &Arc<[usize]>, nseg: usize) -> Var {
        let av = self.value(a);
        assert!(av.cols == 1 && av.rows == seg.len(), "segment_softmax shapes");
        let mut mx = vec![f64::NEG_INFINITY; nseg];
        for (e, &s) in seg.iter().enumerate() {
            mx[s] = mx[s].max(av.data[e]);
        }
        let mut out = Tensor::zeros(av.rows, 1);
        let mut tot = vec![0.0; nseg];
        for (e, &s) in seg.iter().enumerate() {
            let v = (av.data[e] - mx[s]).exp();
            out.data[e] = v;
            tot[s] += v;
        }
        for (e, &s) in seg.iter().enumerate() {
            out.data[e] /= tot[s];
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::SegmentSoftmax(a, seg.clone(), nseg), rg)
    }

    /// Outer-product pair map: for `a [n,p]`, `b [m,p]`, `w [p*p, c]`,
    /// `bias [1,c]` returns `z [n*m, c]` with row `i*m + j` equal to
    /// `vec(a_i ⊗ b_j) @ w + bias`.
    pub fn opm(&mut self, a: Var, b: Var, w: Var, bias: Var) -> Var {
        let (av, bv, wv, biasv) = (self.value(a), self.value(b), self.value(w), self.value(bias));
        let (n, p) = av.shape();
        let m = bv.rows;
        assert_eq!(bv.cols, p, "opm inner widths");
        assert_eq!(wv.rows, p * p, "opm weight rows");
        let c = wv.cols;
        assert_eq!(biasv.shape(), (1, c), "opm bias");
        // u_i[q, c] = sum_p a[i,p] w[p*P + q, c]
        let mut u = Tensor::zeros(n, p * c);
        for i in 0..n {
            gemm(av.row(i), &wv.data, u.row_mut(i), 1, p, p * c, false);
        }
        let mut out = Tensor::zeros(n * m, c);
        for i in 0..n {
            let block = &mut out.data[i * m * c..(i + 1) * m * c];
            gemm(&bv.data, u.row(i), block, m, p, c, false);
            for j in 0..m {
                for (o, x) in block[j * c..(j + 1) * c].iter_mut().zip(&biasv.data) {
                    *o += x;
                }
            }
        }
        let rg = self.rg(&[a, b, w, bias]);
        self.push(out, Op::Opm { a, b, w, bias, u }, rg)
    }

    /// Column `col` of a pair tensor `[n*m, H]` as an `[n,m]` matrix
    /// (or `[m,n]` with `transpose`).
    pub fn pair_column(&mut self, z: Var, col: usize, n: usize, m: usize, transpose: bool) -> Var {
        let zv = self.value(z);
        assert_eq!(zv.rows, n * m, "pair_column rows");
        let h = zv.cols;
        let out = if transpose {
            let mut t = Tensor::zeros(m, n);
            for i in 0..n {
                for j in 0..m {
                    t.data[j * n + i] = zv.data[(i * m + j) * h + col];
                }
            }
            t
        } else {
            let data = (0..n * m).map(|r| zv.data[r * h + col]).collect();
            Tensor::from_vec(n, m, data)
        };
        let rg = self.rg(&[z]);
        self.push(
            out,
            Op::PairColumn {
                z,
                col,
                n,
                m,
                transpose,
            },
            rg,
        )
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.len(), rows * cols, "reshape size");
        let out = Tensor::from_vec(rows, cols, av.data.clone());
        let rg = self.rg(&[a]);
        self.push(out, Op::Reshape(a), rg)
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.value(out).len(), 1, "backward from non-scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    /// Accumulate via a closure writing into a zeroed buffer of `v`'s shape.
    fn accumulate_with(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut Tensor)) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let (r, c) = self.value(v).shape();
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(r, c));
        }
        f(slot.as_mut().unwrap());
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate_with(grads, *a, |ga| {
                    // g [n,m] @ b^T [m,k]
                    gemm_nt(&g.data, &bv.data, &mut ga.data, g.rows, g.cols, bv.rows);
                });
                self.accumulate_with(grads, *b, |gb| {
                    gemm_tn(&av.data, &g.data, &mut gb.data, av.rows, av.cols, g.cols);
                });
            }
            Op::MatMulNT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                // out = a b^T; da = g b ; db = g^T a
                self.accumulate_with(grads, *a, |ga| {
                    gemm(&g.data, &bv.data, &mut ga.data, g.rows, g.cols, bv.cols, true);
                });
                self.accumulate_with(grads, *b, |gb| {
                    gemm_tn(&g.data, &av.data, &mut gb.data, g.rows, g.cols, av.cols);
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                let mut n = g.clone();
                n.data.iter_mut().for_each(|x| *x = -*x);
                self.accumulate(grads, *b, n);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate_with(grads, *a, |ga| {
                    for ((o, x), y) in ga.data.iter_mut().zip(&g.data).zip(&bv.data) {
                        *o += x * y;
                    }
                });
                self.accumulate_with(grads, *b, |gb| {
                    for ((o, x), y) in gb.data.iter_mut().zip(&g.data).zip(&av.data) {
                        *o += x * y;
                    }
                });
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate_with(grads, *b, |gb| {
                    for r in 0..g.rows {
                        for (o, x) in gb.data.iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                });
            }
            Op::MulRow(a, s) => {
                let (av, sv) = (self.value(*a), self.value(*s));
                self.accumulate_with(grads, *a, |ga| {
                    for r in 0..g.rows {
                        let gr = g.row(r);
                        for ((o, x), y) in ga.row_mut(r).iter_mut().zip(gr).zip(&sv.data) {
                            *o += x * y;
                        }
                    }
                });
                self.accumulate_with(grads, *s, |gs| {
                    for r in 0..g.rows {
                        for ((o, x), y) in gs.data.iter_mut().zip(g.row(r)).zip(av.row(r)) {
                            *o += x * y;
                        }
                    }
                });
            }
            Op::MulCol(a, c) => {
                let (av, cv) = (self.value(*a), self.value(*c));
                self.accumulate_with(grads, *a, |ga| {
                    for r in 0..g.rows {
                        let s = cv.data[r];
                        for (o, x) in ga.row_mut(r).iter_mut().zip(g.row(r)) {
                            *o += x * s;
                        }
                    }
                });
                self.accumulate_with(grads, *c, |gc| {
                    for r in 0..g.rows {
                        gc.data[r] += g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum::<f64>();
                    }
                });
            }
            Op::MulScalar(a, s) => {
                let (av, sv) = (self.value(*a), self.value(*s).item());
                self.accumulate_with(grads, *a, |ga| {
                    for (o, x) in ga.data.iter_mut().zip(&g.data) {
                        *o += x * sv;
                    }
                });
                self.accumulate_with(grads, *s, |gs| {
                    gs.data[0] += g.data.iter().zip(&av.data).map(|(x, y)| x * y).sum::<f64>();
                });
            }
            Op::Scale(a, c) => {
                let mut n = g.clone();
                n.data.iter_mut().for_each(|x| *x *= c);
                self.accumulate(grads, *a, n);
            }
            Op::AddConst(a) => self.accumulate(grads, *a, g.clone()),
            Op::Unary(a, kind) => {
                let xv = self.value(*a);
                let yv = &node.value;
                let mut d = g.clone();
                for ((o, &x), &y) in d.data.iter_mut().zip(&xv.data).zip(&yv.data) {
                    let dydx = match *kind {
                        Unary::Silu => {
                            let s = sigmoid(x);
                            s + x * s * (1.0 - s)
                        }
                        Unary::Sigmoid => y * (1.0 - y),
                        Unary::Exp => y,
                        Unary::Ln => 1.0 / x,
                        Unary::Sqrt => 0.5 / y,
                        Unary::Square => 2.0 * x,
                        Unary::Recip => -y * y,
                        Unary::Clamp(lo, hi) => {
                            if x >= lo && x <= hi {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Unary::Pow(p) => {
                            if p == 0.0 {
                                0.0
                            } else {
                                p * x.powf(p - 1.0)
                            }
                        }
                    };
                    *o *= dydx;
                }
                self.accumulate(grads, *a, d);
            }
            Op::HuberNorm(a, delta) => {
                let dv = self.value(*a);
                self.accumulate_with(grads, *a, |ga| {
                    for r in 0..dv.rows {
                        let row = dv.row(r);
                        let e = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                        let k = if e <= *delta { 1.0 } else { delta / e };
                        let gr = g.data[r] * k;
                        for (o, x) in ga.row_mut(r).iter_mut().zip(row) {
                            *o += gr * x;
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let pc = self.value(*p).cols;
                    self.accumulate_with(grads, *p, |gp| {
                        for r in 0..g.rows {
                            for (o, x) in gp.row_mut(r).iter_mut().zip(&g.row(r)[off..off + pc]) {
                                *o += x;
                            }
                        }
                    });
                    off += pc;
                }
            }
            Op::SliceCols(a, start) => {
                let len = g.cols;
                self.accumulate_with(grads, *a, |ga| {
                    for r in 0..g.rows {
                        for (o, x) in ga.row_mut(r)[*start..*start + len].iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                });
            }
            Op::SliceRows(a, start) => {
                let c = g.cols;
                self.accumulate_with(grads, *a, |ga| {
                    for (o, x) in ga.data[*start * c..].iter_mut().zip(&g.data) {
                        *o += x;
                    }
                });
            }
            Op::Gather(a, idx) => {
                self.accumulate_with(grads, *a, |ga| {
                    for (e, &i) in idx.iter().enumerate() {
                        for (o, x) in ga.row_mut(i).iter_mut().zip(g.row(e)) {
                            *o += x;
                        }
                    }
                });
            }
            Op::ScatterAdd(a, idx) => {
                self.accumulate_with(grads, *a, |ga| {
                    for (e, &i) in idx.iter().enumerate() {
                        for (o, x) in ga.row_mut(e).iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                });
            }
            Op::RowSum(a) => {
                self.accumulate_with(grads, *a, |ga| {
                    for r in 0..ga.rows {
                        let s = g.data[r];
                        ga.row_mut(r).iter_mut().for_each(|o| *o += s);
                    }
                });
            }
            Op::ColSum(a) => {
                self.accumulate_with(grads, *a, |ga| {
                    for r in 0..ga.rows {
                        for (o, x) in ga.row_mut(r).iter_mut().zip(&g.data) {
                            *o += x;
                        }
                    }
                });
            }
            Op::SumAll(a) => {
                let s = g.item();
                self.accumulate_with(grads, *a, |ga| ga.data.iter_mut().for_each(|o| *o += s));
            }
            Op::LayerNorm(a, inv) => {
                let y = &node.value;
                self.accumulate_with(grads, *a, |ga| {
                    let m = y.cols as f64;
                    for r in 0..y.rows {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let mg = gr.iter().sum::<f64>() / m;
                        let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / m;
                        for ((o, gv), yv) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *o += inv[r] * (gv - mg - yv * mgy);
                        }
                    }
                });
            }
            Op::RowSoftmax(a) => {
                let y = &node.value;
                self.accumulate_with(grads, *a, |ga| {
                    for r in 0..y.rows {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot = yr.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>();
                        for ((o, gv), yv) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *o += yv * (gv - dot);
                        }
                    }
                });
            }
            Op::SegmentSoftmax(a, seg, nseg) => {
                let y = &node.value;
                let mut dot = vec![0.0; *nseg];
                for (e, &s) in seg.iter().enumerate() {
                    dot[s] += y.data[e] * g.data[e];
                }
                self.accumulate_with(grads, *a, |ga| {
                    for (e, &s) in seg.iter().enumerate() {
                        ga.data[e] += y.data[e] * (g.data[e] - dot[s]);
                    }
                });
            }
            Op::Opm { a, b, w, bias, u } => self.opm_backward(*a, *b, *w, *bias, u, g, grads),
            Op::PairColumn {
                z,
                col,
                n,
                m,
                transpose,
            } => {
                let (n, m, col) = (*n, *m, *col);
                let transpose = *transpose;
                self.accumulate_with(grads, *z, |gz| {
                    let h = gz.cols;
                    for i in 0..n {
                        for j in 0..m {
                            let gv = if transpose {
                                g.data[j * n + i]
                            } else {
                                g.data[i * m + j]
                            };
                            gz.data[(i * m + j) * h + col] += gv;
                        }
                    }
                });
            }
            Op::Reshape(a) => {
                let (r, c) = self.value(*a).shape();
                self.accumulate(grads, *a, Tensor::from_vec(r, c, g.data.clone()));
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn opm_backward(
        &self,
        a: Var,
        b: Var,
        w: Var,
        bias: Var,
        u: &Tensor,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let (av, bv, wv) = (self.value(a), self.value(b), self.value(w));
        let (n, p) = av.shape();
        let m = bv.rows;
        let c = wv.cols;
        self.accumulate_with(grads, bias, |gb| {
            for r in 0..g.rows {
                for (o, x) in gb.data.iter_mut().zip(g.row(r)) {
                    *o += x;
                }
            }
        });
        let need_u = self.nodes[a.0].requires_grad || self.nodes[w.0].requires_grad;
        // du_i [p, c] = b^T [p, m] @ g_i [m, c]
        let mut du = Tensor::zeros(n, p * c);
        if need_u {
            for i in 0..n {
                let gi = &g.data[i * m * c..(i + 1) * m * c];
                gemm_tn(&bv.data, gi, du.row_mut(i), m, p, c);
            }
        }
        self.accumulate_with(grads, b, |gbm| {
            // db[j, q] = sum_i g_i[j, :] . u_i[q, :]
            for i in 0..n {
                let gi = &g.data[i * m * c..(i + 1) * m * c];
                gemm_nt(gi, u.row(i), &mut gbm.data, m, c, p);
            }
        });
        self.accumulate_with(grads, a, |ga| {
            // da[i, p] = sum_{q,c} du_i[q,c] w[p*P+q, c]
            for i in 0..n {
                let dui = du.row(i);
                for pp in 0..p {
                    let wrow = &wv.data[pp * p * c..(pp + 1) * p * c];
                    ga.data[i * p + pp] += wrow.iter().zip(dui).map(|(x, y)| x * y).sum::<f64>();
                }
            }
        });
        self.accumulate_with(grads, w, |gw| {
            // dw[p*P+q, c] = sum_i a[i,p] du_i[q,c]
            gemm_tn(&av.data, &du.data, &mut gw.data, n, p, p * c);
        });
    }
}

pub fn huber(e: f64, delta: f64) -> f64 {
    if e <= delta {
        0.5 * e * e
    } else {
        delta * (e - 0.5 * delta)
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut tot = 0.0;
    for x in row.iter_mut() {
        *x = (*x - mx).exp();
        tot += *x;
    }
    row.iter_mut().for_each(|x| *x /= tot);
}
