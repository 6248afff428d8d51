//! Dense matrices, Cholesky factorization with jitter escalation, and the
//! triangular solves built on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: x.len(),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    pub fn transpose_mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        Ok(out)
    }

    /// `Aᵀ A`, symmetric by construction.
    pub fn gram(&self) -> SymMatrix {
        let n = self.cols;
        SymMatrix::from_fn(n, |i, j| {
            (0..self.rows).map(|r| self.get(r, i) * self.get(r, j)).sum()
        })
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: other.rows,
            });
        }
        Ok(Matrix::from_fn(self.rows, other.cols, |i, j| {
            (0..self.cols).map(|k| self.get(i, k) * other.get(k, j)).sum()
        }))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Square symmetric matrix. Full storage; symmetry is enforced when built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    inner: Matrix,
}

impl SymMatrix {
    /// Evaluates `f` on the lower triangle only and mirrors it.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        SymMatrix { inner: m }
    }

    /// Symmetrizes `(A + Aᵀ) / 2`.
    pub fn from_matrix(a: &Matrix) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::DimensionMismatch {
                expected: a.rows(),
                got: a.cols(),
            });
        }
        Ok(SymMatrix::from_fn(a.rows(), |i, j| {
            0.5 * (a.get(i, j) + a.get(j, i))
        }))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix::from_fn(n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.inner.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(i, j)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.inner
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    pub fn add_diagonal(&self, v: f64) -> SymMatrix {
        let mut m = self.inner.clone();
        for i in 0..self.dim() {
            m.set(i, i, m.get(i, i) + v);
        }
        SymMatrix { inner: m }
    }

    pub fn add_scaled_diagonal(&self, d: &[f64], scale: f64) -> SymMatrix {
        let mut m = self.inner.clone();
        for (i, di) in d.iter().enumerate() {
            m.set(i, i, m.get(i, i) + scale * di);
        }
        SymMatrix { inner: m }
    }
}

/// Lower-triangular `L` with `L Lᵀ = A + jitter_used * I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CholeskyFactor {
    lower: Matrix,
    jitter_used: f64,
}

impl CholeskyFactor {
    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    /// Solves `L x = b` in place.
    pub fn forward_substitute(&self, b: &mut [f64]) {
        let l = &self.lower;
        for i in 0..b.len() {
            let row = l.row(i);
            let s = dot(&row[..i], &b[..i]);
            b[i] = (b[i] - s) / row[i];
        }
    }

    /// Solves `Lᵀ x = b` in place.
    pub fn back_substitute(&self, b: &mut [f64]) {
        let l = &self.lower;
        let n = b.len();
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= l.get(k, i) * b[k];
            }
            b[i] = s / l.get(i, i);
        }
    }

    /// `L Lᵀ`, for reconstruction checks.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.dim();
        let l = &self.lower;
        Matrix::from_fn(n, n, |i, j| {
            let m = i.min(j);
            (0..=m).map(|k| l.get(i, k) * l.get(j, k)).sum()
        })
    }

    /// Explicit inverse of `L Lᵀ`, column by column.
    pub fn inverse(&self) -> SymMatrix {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        let mut col = vec![0.0; n];
        for j in 0..n {
            col.iter_mut().for_each(|v| *v = 0.0);
            col[j] = 1.0;
            self.forward_substitute(&mut col);
            self.back_substitute(&mut col);
            for (i, v) in col.iter().enumerate() {
                inv.set(i, j, *v);
            }
        }
        SymMatrix::from_fn(n, |i, j| 0.5 * (inv.get(i, j) + inv.get(j, i)))
    }
}

fn try_factor(a: &SymMatrix, jitter: f64) -> Option<Matrix> {
    let n = a.dim();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let row_j = &l.data[j * n..j * n + j];
        let d = a.get(j, j) + jitter - dot(row_j, row_j);
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l.set(j, j, djj);
        for i in j + 1..n {
            let s = dot(&l.data[i * n..i * n + j], &l.data[j * n..j * n + j]);
            l.set(i, j, (a.get(i, j) - s) / djj);
        }
    }
    Some(l)
}

/// Cholesky factorization. Non-positive-definite input is retried with
/// diagonal jitter starting at `1e-10 * mean(diag)` and growing tenfold per
/// attempt while it stays at or below `max_jitter`.
pub fn cholesky(a: &SymMatrix, max_jitter: f64) -> Result<CholeskyFactor> {
    if let Some(lower) = try_factor(a, 0.0) {
        return Ok(CholeskyFactor {
            lower,
            jitter_used: 0.0,
        });
    }
    let n = a.dim().max(1);
    let mean_diag = a.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    let mut jitter = 1e-10 * if mean_diag > 0.0 { mean_diag } else { 1.0 };
    while jitter <= max_jitter {
        if let Some(lower) = try_factor(a, jitter) {
            return Ok(CholeskyFactor {
                lower,
                jitter_used: jitter,
            });
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite { max_jitter })
}

pub fn solve_chol(f: &CholeskyFactor, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != f.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            got: b.len(),
        });
    }
    let mut x = b.to_vec();
    f.forward_substitute(&mut x);
    f.back_substitute(&mut x);
    Ok(x)
}

/// `log |L Lᵀ| = 2 Σ log L_ii`.
pub fn log_det(f: &CholeskyFactor) -> f64 {
    2.0 * (0..f.dim()).map(|i| f.lower.get(i, i).ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
        let b = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        b.gram().add_diagonal(1.0)
    }

    /// Gauss-Jordan inverse with partial pivoting (test oracle).
    fn gauss_jordan_inverse(a: &Matrix) -> Matrix {
        let n = a.rows();
        let mut aug = Matrix::from_fn(n, 2 * n, |i, j| {
            if j < n {
                a.get(i, j)
            } else if j - n == i {
                1.0
            } else {
                0.0
            }
        });
        for c in 0..n {
            let p = (c..n)
                .max_by(|&x, &y| aug.get(x, c).abs().partial_cmp(&aug.get(y, c).abs()).unwrap())
                .unwrap();
            for j in 0..2 * n {
                let t = aug.get(c, j);
                aug.set(c, j, aug.get(p, j));
                aug.set(p, j, t);
            }
            let piv = aug.get(c, c);
            for j in 0..2 * n {
                aug.set(c, j, aug.get(c, j) / piv);
            }
            for r in 0..n {
                if r != c {
                    let f = aug.get(r, c);
                    for j in 0..2 * n {
                        aug.set(r, j, aug.get(r, j) - f * aug.get(c, j));
                    }
                }
            }
        }
        Matrix::from_fn(n, n, |i, j| aug.get(i, n + j))
    }

    #[test]
    fn identity_factor() {
        let f = cholesky(&SymMatrix::identity(4), 0.0).unwrap();
        assert_eq!(f.jitter_used(), 0.0);
        assert_eq!(f.reconstruct(), SymMatrix::identity(4).as_matrix().clone());
        assert_eq!(solve_chol(&f, &[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(log_det(&f), 0.0);
    }

    #[test]
    fn hand_factor_2x2() {
        let a = SymMatrix::from_matrix(
            &Matrix::from_row_major(2, 2, vec![4.0, 2.0, 2.0, 3.0]).unwrap(),
        )
        .unwrap();
        let f = cholesky(&a, 0.0).unwrap();
        let l = f.lower();
        assert!((l.get(0, 0) - 2.0).abs() < 1e-15);
        assert_eq!(l.get(0, 1), 0.0);
        assert!((l.get(1, 0) - 1.0).abs() < 1e-15);
        assert!((l.get(1, 1) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn log_det_diag() {
        let a = SymMatrix::from_fn(2, |i, j| match (i, j) {
            (0, 0) => 2.0,
            (1, 1) => 8.0,
            _ => 0.0,
        });
        let f = cholesky(&a, 0.0).unwrap();
        assert!((log_det(&f) - 16f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn solve_matches_inverse_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_spd(3, &mut rng);
        let b = [0.3, -1.2, 2.0];
        let inv = gauss_jordan_inverse(a.as_matrix());
        let oracle = inv.mul_vec(&b).unwrap();
        let f = cholesky(&a, 0.0).unwrap();
        let x = solve_chol(&f, &b).unwrap();
        for (u, v) in x.iter().zip(&oracle) {
            assert!((u - v).abs() < 1e-10);
        }
        let finv = f.inverse();
        for i in 0..3 {
            for j in 0..3 {
                assert!((finv.get(i, j) - inv.get(i, j)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn solve_residual_20x20() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_spd(20, &mut rng);
        let b: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = solve_chol(&cholesky(&a, 0.0).unwrap(), &b).unwrap();
        let ax = a.as_matrix().mul_vec(&x).unwrap();
        let r: f64 = ax.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(r / nb < 1e-9);
    }

    #[test]
    fn dimension_mismatch() {
        let f = cholesky(&SymMatrix::identity(3), 0.0).unwrap();
        assert!(matches!(
            solve_chol(&f, &[1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        // rank-1: v vᵀ
        let v = [1.0, 2.0, 3.0];
        let a = SymMatrix::from_fn(3, |i, j| v[i] * v[j]);
        assert!(matches!(
            cholesky(&a, 0.0),
            Err(Error::NotPositiveDefinite { .. })
        ));
        let f = cholesky(&a, 1e-3).unwrap();
        assert!(f.jitter_used() > 0.0 && f.jitter_used() <= 1e-3);
        let target = a.add_diagonal(f.jitter_used());
        let diff = Matrix::from_fn(3, 3, |i, j| f.reconstruct().get(i, j) - target.get(i, j));
        assert!(diff.frobenius() / a.as_matrix().frobenius() < 1e-10);
    }

    #[test]
    fn indefinite_rejected() {
        let a = SymMatrix::from_fn(2, |i, j| if i == j { -1.0 } else { 0.0 });
        assert!(cholesky(&a, 1e-2).is_err());
    }
}
