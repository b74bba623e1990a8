use serde::{Deserialize, Serialize};

/// Dense row-major f64 matrix. Vectors are `1 x n` or `n x 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data length");
        Self { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], cols: usize) -> Self {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec(1, 1, vec![v])
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// `out (+)= a @ b` for row-major `a [n,k]`, `b [k,m]`.
pub fn gemm(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize, acc: bool) {
    dgemm(a, (k, 1), b, (m, 1), out, n, k, m, acc);
}

/// `a^T @ b` where `a [k,n]`, `b [k,m]` -> `[n,m]`, accumulated into `out`.
pub fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], k: usize, n: usize, m: usize) {
    dgemm(a, (1, n), b, (m, 1), out, n, k, m, true);
}

/// `a @ b^T` where `a [n,k]`, `b [m,k]` -> `[n,m]`, accumulated into `out`.
pub fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    dgemm(a, (k, 1), b, (1, k), out, n, k, m, true);
}

/// Strided `out [n,m] (+)= A [n,k] @ B [k,m]`; strides are (row, col).
#[allow(clippy::too_many_arguments)]
fn dgemm(
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    out: &mut [f64],
    n: usize,
    k: usize,
    m: usize,
    acc: bool,
) {
    assert!(out.len() >= n * m, "gemm output too small");
    if n == 0 || m == 0 {
        return;
    }
    if k == 0 {
        if !acc {
            out[..n * m].iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    assert!(a.len() > (n - 1) * rsa + (k - 1) * csa, "gemm lhs too small");
    assert!(b.len() > (k - 1) * rsb + (m - 1) * csb, "gemm rhs too small");
    // SAFETY: the asserts above bound every index the kernel touches, and
    // `out` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            n,
            k,
            m,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            if acc { 1.0 } else { 0.0 },
            out.as_mut_ptr(),
            m as isize,
            1,
        );
    }
}
