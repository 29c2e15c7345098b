//! Small dense-matrix utilities shared by the solvers.

use nalgebra::{DMatrix, SymmetricEigen};

/// A time series of `k x k` real matrices stored contiguously
/// (column-major per entry, matching nalgebra).
#[derive(Debug, Clone, PartialEq)]
pub struct MatSeries {
    k: usize,
    data: Vec<f64>,
}

impl MatSeries {
    pub fn zeros(k: usize, len: usize) -> Self {
        Self {
            k,
            data: vec![0.0; k * k * len],
        }
    }

    pub fn from_matrices(k: usize, mats: &[DMatrix<f64>]) -> Self {
        let mut s = Self::zeros(k, mats.len());
        for (n, m) in mats.iter().enumerate() {
            s.set(n, m);
        }
        s
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.data.len() / (self.k * self.k)
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice(&self, n: usize) -> &[f64] {
        let kk = self.k * self.k;
        &self.data[n * kk..(n + 1) * kk]
    }

    pub fn slice_mut(&mut self, n: usize) -> &mut [f64] {
        let kk = self.k * self.k;
        &mut self.data[n * kk..(n + 1) * kk]
    }

    pub fn get(&self, n: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.k, self.k, self.slice(n))
    }

    pub fn set(&mut self, n: usize, m: &DMatrix<f64>) {
        self.slice_mut(n).copy_from_slice(m.as_slice());
    }
}

/// `out += alpha * a * b` for column-major `k x k` slices.
#[inline]
pub fn gemm_acc(k: usize, alpha: f64, a: &[f64], b: &[f64], out: &mut [f64]) {
    for j in 0..k {
        for l in 0..k {
            let blj = alpha * b[l + j * k];
            if blj == 0.0 {
                continue;
            }
            let col = &a[l * k..(l + 1) * k];
            let o = &mut out[j * k..(j + 1) * k];
            for i in 0..k {
                o[i] += col[i] * blj;
            }
        }
    }
}

/// `out += alpha * a * b^T`.
#[inline]
pub fn gemm_nt_acc(k: usize, alpha: f64, a: &[f64], b: &[f64], out: &mut [f64]) {
    for j in 0..k {
        for l in 0..k {
            let bjl = alpha * b[j + l * k];
            if bjl == 0.0 {
                continue;
            }
            let col = &a[l * k..(l + 1) * k];
            let o = &mut out[j * k..(j + 1) * k];
            for i in 0..k {
                o[i] += col[i] * bjl;
            }
        }
    }
}

/// `(m + m^T) / 2`.
pub fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Relative asymmetry `max|m - m^T| / max(1, max|m|)`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let d = max_abs(&(m - m.transpose()));
    d / max_abs(m).max(1.0)
}

/// Sorted eigenvalues of the symmetric part of `m`.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(sym(m))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Block matrix `[[a, b], [c, d]]` from four `k x k` blocks.
pub fn block2(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> DMatrix<f64> {
    let k = a.nrows();
    let mut m = DMatrix::zeros(2 * k, 2 * k);
    m.view_mut((0, 0), (k, k)).copy_from(a);
    m.view_mut((0, k), (k, k)).copy_from(b);
    m.view_mut((k, 0), (k, k)).copy_from(c);
    m.view_mut((k, k), (k, k)).copy_from(d);
    m
}

/// Extract block `(bi, bj)` of size `k` from a `2k x 2k` matrix.
pub fn block(m: &DMatrix<f64>, k: usize, bi: usize, bj: usize) -> DMatrix<f64> {
    m.view((bi * k, bj * k), (k, k)).into_owned()
}

/// Symplectic form `[[0, 1], [-1, 0]]` for `(X, P)` ordering.
pub fn symplectic_form(k: usize) -> DMatrix<f64> {
    let z = DMatrix::zeros(k, k);
    let i = DMatrix::identity(k, k);
    block2(&z, &i, &(-&i), &z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_nalgebra() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.5, -1.0, 0.0, 3.0, 2.0, 1.0, 1.0]);
        let b = DMatrix::from_row_slice(3, 3, &[0.3, -2.0, 1.0, 1.0, 4.0, 0.0, -1.0, 1.0, 2.0]);
        let mut out = vec![0.0; 9];
        gemm_acc(3, 2.0, a.as_slice(), b.as_slice(), &mut out);
        let want = &a * &b * 2.0;
        assert!(max_abs(&(DMatrix::from_column_slice(3, 3, &out) - want)) < 1e-14);
        let mut out = vec![0.0; 9];
        gemm_nt_acc(3, 1.0, a.as_slice(), b.as_slice(), &mut out);
        let want = &a * b.transpose();
        assert!(max_abs(&(DMatrix::from_column_slice(3, 3, &out) - want)) < 1e-14);
    }
}
