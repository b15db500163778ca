use crate::error::{Error, Result};

/// Row-major dense matrix of 64-bit reals.
///
/// All training-time tensors in this crate are `DenseMatrix` or flat
/// `Vec<f64>`; there is no autodiff graph beyond the layer tape.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds from a flat row-major buffer, validating length and finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::config(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("matrix contains non-finite entries"));
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        debug_assert!(r < self.rows);
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        debug_assert!(r < self.rows);
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }
}

/// C = A * B with A (m,k), B (k,n), C (m,n), all row-major.
///
/// ikj order keeps the inner loop contiguous so LLVM vectorizes it.
pub fn matmul_nn(a: &DenseMatrix, b: &DenseMatrix, c: &mut DenseMatrix) {
    assert_eq!(a.cols, b.rows, "matmul_nn inner dims");
    assert_eq!(c.rows, a.rows, "matmul_nn output rows");
    assert_eq!(c.cols, b.cols, "matmul_nn output cols");
    let n = b.cols;
    let k = a.cols;
    c.data.fill(0.0);
    for i in 0..a.rows {
        let a_row = &a.data[i * k..(i + 1) * k];
        let c_row = &mut c.data[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b.data[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// C = A * B^T with A (m,k), B (n,k), C (m,n).
///
/// Rows of A against rows of B: plain dot products.
pub fn matmul_nt(a: &DenseMatrix, b: &DenseMatrix, c: &mut DenseMatrix) {
    assert_eq!(a.cols, b.cols, "matmul_nt inner dims");
    assert_eq!(c.rows, a.rows, "matmul_nt output rows");
    assert_eq!(c.cols, b.rows, "matmul_nt output cols");
    let k = a.cols;
    for i in 0..a.rows {
        let a_row = &a.data[i * k..(i + 1) * k];
        let c_row = &mut c.data[i * b.rows..(i + 1) * b.rows];
        for (j, cv) in c_row.iter_mut().enumerate() {
            let b_row = &b.data[j * k..(j + 1) * k];
            *cv = dot(a_row, b_row);
        }
    }
}

/// C += A^T * B with A (k,m), B (k,n), C (m,n).
///
/// Accumulating form used for weight gradients over a batch.
pub fn matmul_tn_acc(a: &DenseMatrix, b: &DenseMatrix, c: &mut DenseMatrix) {
    assert_eq!(a.rows, b.rows, "matmul_tn inner dims");
    assert_eq!(c.rows, a.cols, "matmul_tn output rows");
    assert_eq!(c.cols, b.cols, "matmul_tn output cols");
    let m = a.cols;
    let n = b.cols;
    for kk in 0..a.rows {
        let a_row = &a.data[kk * m..(kk + 1) * m];
        let b_row = &b.data[kk * n..(kk + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let c_row = &mut c.data[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four partial sums so the reduction vectorizes.
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut s3 = 0.0;
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    let mut s = s0 + s1 + s2 + s3;
    for j in chunks * 4..a.len() {
        s += a[j] * b[j];
    }
    s
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> DenseMatrix {
        DenseMatrix::from_vec(rows, cols, v.to_vec()).unwrap()
    }

    // Independent O(n^3) oracle with the textbook ijk loop order.
    fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        let mut c = DenseMatrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                c.set(i, j, s);
            }
        }
        c
    }

    #[test]
    fn from_vec_rejects_bad_length_and_nan() {
        assert!(DenseMatrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(DenseMatrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn matmul_kernels_match_naive_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for &(m, k, n) in &[(1usize, 1usize, 1usize), (3, 5, 2), (7, 4, 9), (5, 16, 3)] {
            let a = mat(
                m,
                k,
                &(0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>(),
            );
            let b = mat(
                k,
                n,
                &(0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>(),
            );
            let expect = naive_matmul(&a, &b);

            let mut c = DenseMatrix::zeros(m, n);
            matmul_nn(&a, &b, &mut c);
            assert!(c
                .as_slice()
                .iter()
                .zip(expect.as_slice())
                .all(|(x, y)| (x - y).abs() < 1e-12));

            // nt: A * B^T where we pass B transposed as (n,k).
            let mut bt = DenseMatrix::zeros(n, k);
            for r in 0..k {
                for cc in 0..n {
                    bt.set(cc, r, b.get(r, cc));
                }
            }
            let mut c2 = DenseMatrix::zeros(m, n);
            matmul_nt(&a, &bt, &mut c2);
            assert!(c2
                .as_slice()
                .iter()
                .zip(expect.as_slice())
                .all(|(x, y)| (x - y).abs() < 1e-12));

            // tn: A^T * B where we pass A transposed as (k,m).
            let mut at = DenseMatrix::zeros(k, m);
            for r in 0..m {
                for cc in 0..k {
                    at.set(cc, r, a.get(r, cc));
                }
            }
            let mut c3 = DenseMatrix::zeros(m, n);
            matmul_tn_acc(&at, &b, &mut c3);
            assert!(c3
                .as_slice()
                .iter()
                .zip(expect.as_slice())
                .all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }
}
