//! Sparse LDLᵀ factorization of symmetric positive definite matrices with a
//! fixed elimination order. The selected inverse uses the Takahashi
//! recurrences.
//!
//! Storage is column-compressed lower triangular. Each column stores its
//! diagonal first, followed by the strictly-lower rows in increasing order.
//! The symbolic phase records, for every column, where each rank-one update
//! lands, so repeated numeric factorizations with the same pattern are cheap.

use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SparseError {
    #[error("matrix is not positive definite: pivot {pivot:e} at column {column}")]
    NotPositiveDefinite { column: usize, pivot: f64 },
    #[error("non-finite value in matrix at column {column}")]
    NonFinite { column: usize },
}

/// Fill pattern of L and the update target table.
#[derive(Debug, Clone)]
pub struct SymbolicLdl {
    n: usize,
    colptr: Vec<usize>,
    rowidx: Vec<u32>,
    pair_ptr: Vec<usize>,
    targets: Vec<u32>,
}

impl SymbolicLdl {
    /// `lower[j]` lists rows `i > j` with a structural nonzero `A[i, j]`.
    pub fn analyze(lower: &[Vec<usize>]) -> Self {
        let n = lower.len();
        let mut pattern: Vec<Vec<u32>> = lower.iter().map(|c| c.iter().map(|&i| i as u32).collect()).collect();
        for j in 0..n {
            let mut col = std::mem::take(&mut pattern[j]);
            col.sort_unstable();
            col.dedup();
            debug_assert!(col.first().is_none_or(|&i| i as usize > j));
            if let Some(&parent) = col.first() {
                let rest = col[1..].to_vec();
                pattern[parent as usize].extend(rest);
            }
            pattern[j] = col;
        }

        let mut colptr = Vec::with_capacity(n + 1);
        let mut rowidx = Vec::new();
        for (j, col) in pattern.iter().enumerate() {
            colptr.push(rowidx.len());
            rowidx.push(j as u32);
            rowidx.extend_from_slice(col);
        }
        colptr.push(rowidx.len());

        let mut sym = Self { n, colptr, rowidx, pair_ptr: Vec::with_capacity(n + 1), targets: Vec::new() };
        let mut targets = Vec::new();
        let mut pair_ptr = Vec::with_capacity(n + 1);
        for col in &pattern {
            pair_ptr.push(targets.len());
            for a in 0..col.len() {
                for b in 0..=a {
                    let t = sym.position(col[a] as usize, col[b] as usize).expect("fill pattern is closed");
                    targets.push(t as u32);
                }
            }
        }
        pair_ptr.push(targets.len());
        sym.pair_ptr = pair_ptr;
        sym.targets = targets;
        sym
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored entries including the diagonal.
    pub fn nnz(&self) -> usize {
        self.rowidx.len()
    }

    pub fn diag_position(&self, j: usize) -> usize {
        self.colptr[j]
    }

    /// Storage position of entry `(i, j)` with `i >= j`, if structurally present.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let s = self.colptr[j];
        if i == j {
            return Some(s);
        }
        let rows = &self.rowidx[s + 1..self.colptr[j + 1]];
        rows.binary_search(&(i as u32)).ok().map(|k| s + 1 + k)
    }

    /// Strictly lower rows of column `j`.
    pub fn rows(&self, j: usize) -> &[u32] {
        &self.rowidx[self.colptr[j] + 1..self.colptr[j + 1]]
    }
}

/// Numeric factor `A = L D Lᵀ` sharing a symbolic structure.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    sym: Arc<SymbolicLdl>,
    /// Diagonal positions hold D, the rest hold L.
    vals: Vec<f64>,
}

impl LdlFactor {
    /// Factorizes in place. `vals` holds the lower triangle of A in the
    /// storage layout of `sym` (zeros at fill positions).
    pub fn factorize(sym: Arc<SymbolicLdl>, mut vals: Vec<f64>) -> Result<Self, SparseError> {
        assert_eq!(vals.len(), sym.nnz());
        let mut tmp = Vec::new();
        for j in 0..sym.n {
            let p0 = sym.colptr[j];
            let d = vals[p0];
            if !d.is_finite() {
                return Err(SparseError::NonFinite { column: j });
            }
            if d <= 0.0 {
                return Err(SparseError::NotPositiveDefinite { column: j, pivot: d });
            }
            let (s, e) = (p0 + 1, sym.colptr[j + 1]);
            tmp.clear();
            tmp.extend_from_slice(&vals[s..e]);
            let inv = 1.0 / d;
            for v in &mut vals[s..e] {
                *v *= inv;
            }
            let mut t = sym.pair_ptr[j];
            for a in 0..tmp.len() {
                let la = vals[s + a];
                for &tb in &tmp[..=a] {
                    vals[sym.targets[t] as usize] -= la * tb;
                    t += 1;
                }
            }
        }
        Ok(Self { sym, vals })
    }

    pub fn symbolic(&self) -> &Arc<SymbolicLdl> {
        &self.sym
    }

    pub fn n(&self) -> usize {
        self.sym.n
    }

    pub fn pivot(&self, j: usize) -> f64 {
        self.vals[self.sym.colptr[j]]
    }

    /// Log-determinant of the leading `k` x `k` principal submatrix.
    pub fn logdet_leading(&self, k: usize) -> f64 {
        (0..k).map(|j| self.pivot(j).ln()).sum()
    }

    pub fn logdet(&self) -> f64 {
        self.logdet_leading(self.sym.n)
    }

    fn forward(&self, b: &mut [f64]) {
        let sym = &*self.sym;
        for j in 0..sym.n {
            let bj = b[j];
            if bj != 0.0 {
                let s = sym.colptr[j] + 1;
                for (k, &i) in sym.rows(j).iter().enumerate() {
                    b[i as usize] -= self.vals[s + k] * bj;
                }
            }
        }
    }

    fn backward(&self, b: &mut [f64]) {
        let sym = &*self.sym;
        for j in (0..sym.n).rev() {
            let s = sym.colptr[j] + 1;
            let mut acc = b[j];
            for (k, &i) in sym.rows(j).iter().enumerate() {
                acc -= self.vals[s + k] * b[i as usize];
            }
            b[j] = acc;
        }
    }

    /// Overwrites `b` with `A⁻¹ b`.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.sym.n);
        self.forward(b);
        for (j, v) in b.iter_mut().enumerate() {
            *v /= self.pivot(j);
        }
        self.backward(b);
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Maps standard normal `z` to a draw from `N(0, A⁻¹)`.
    pub fn correlate_in_place(&self, z: &mut [f64]) {
        assert_eq!(z.len(), self.sym.n);
        for (j, v) in z.iter_mut().enumerate() {
            *v /= self.pivot(j).sqrt();
        }
        self.backward(z);
    }

    /// Entries of `A⁻¹` on the fill pattern, computed for columns in
    /// `cols` using only rows below `row_limit`.
    ///
    /// With `cols = 0..k` and `row_limit = k` this is the selected inverse
    /// of the leading `k` x `k` block. With `cols = k..n` and
    /// `row_limit = n` it gives the trailing block of the full inverse.
    /// Positions outside the computed range are left at zero.
    pub fn selected_inverse(&self, cols: std::ops::Range<usize>, row_limit: usize) -> SelectedInverse {
        let sym = &*self.sym;
        assert!(cols.end <= row_limit && row_limit <= sym.n);
        let mut z = vec![0.0; sym.nnz()];
        let mut acc = Vec::new();
        for j in cols.rev() {
            let s = sym.colptr[j] + 1;
            let rows = sym.rows(j);
            let m = rows.partition_point(|&i| (i as usize) < row_limit);
            let l = &self.vals[s..s + m];
            acc.clear();
            acc.resize(m, 0.0);
            let mut t = sym.pair_ptr[j];
            for a in 0..m {
                for b in 0..=a {
                    let zab = z[sym.targets[t] as usize];
                    t += 1;
                    acc[a] -= l[b] * zab;
                    if a != b {
                        acc[b] -= l[a] * zab;
                    }
                }
            }
            let mut diag = 1.0 / self.pivot(j);
            for a in 0..m {
                z[s + a] = acc[a];
                diag -= l[a] * acc[a];
            }
            z[sym.colptr[j]] = diag;
        }
        SelectedInverse { sym: Arc::clone(&self.sym), vals: z }
    }
}

/// Values of an inverse on the fill pattern of its factor.
#[derive(Debug, Clone)]
pub struct SelectedInverse {
    sym: Arc<SymbolicLdl>,
    vals: Vec<f64>,
}

impl SelectedInverse {
    pub fn diag(&self, j: usize) -> f64 {
        self.vals[self.sym.colptr[j]]
    }

    /// Entry `(i, j)` if it lies on the pattern.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (a, b) = if i >= j { (i, j) } else { (j, i) };
        self.sym.position(a, b).map(|p| self.vals[p])
    }
}

/// Dense symmetric matrix (row-major, full storage) to the layout used by
/// [`LdlFactor::factorize`]. Test and small-problem helper.
pub fn from_dense(a: &[f64], n: usize) -> (Arc<SymbolicLdl>, Vec<f64>) {
    let lower: Vec<Vec<usize>> = (0..n).map(|j| (j + 1..n).filter(|&i| a[i * n + j] != 0.0).collect()).collect();
    let sym = Arc::new(SymbolicLdl::analyze(&lower));
    let mut vals = vec![0.0; sym.nnz()];
    for j in 0..n {
        for i in j..n {
            if let Some(p) = sym.position(i, j) {
                vals[p] = a[i * n + j];
            }
        }
    }
    (sym, vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sparse_spd(n: usize, density: f64, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if rng.random::<f64>() < density {
                    b[(i, j)] = rng.random_range(-1.0..1.0);
                }
            }
        }
        let mut a = &b * b.transpose();
        for i in 0..n {
            a[(i, i)] += 0.5;
        }
        a
    }

    fn factor_of(a: &DMatrix<f64>) -> LdlFactor {
        let n = a.nrows();
        let flat: Vec<f64> = (0..n * n).map(|k| a[(k / n, k % n)]).collect();
        let (sym, vals) = from_dense(&flat, n);
        LdlFactor::factorize(sym, vals).unwrap()
    }

    #[test]
    fn solve_matches_dense() {
        let a = random_sparse_spd(40, 0.05, 1);
        let f = factor_of(&a);
        let b: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let x = f.solve(&b);
        let expect = a.clone().cholesky().unwrap().solve(&DVector::from_vec(b));
        for i in 0..40 {
            assert!((x[i] - expect[i]).abs() < 1e-9 * (1.0 + expect[i].abs()));
        }
    }

    #[test]
    fn logdet_and_leading_block() {
        let a = random_sparse_spd(30, 0.08, 2);
        let f = factor_of(&a);
        let full = a.clone().cholesky().unwrap().l().diagonal().iter().map(|v| 2.0 * v.ln()).sum::<f64>();
        assert!((f.logdet() - full).abs() < 1e-9);
        let lead = a.view((0, 0), (12, 12)).into_owned();
        let ld = lead.cholesky().unwrap().l().diagonal().iter().map(|v| 2.0 * v.ln()).sum::<f64>();
        assert!((f.logdet_leading(12) - ld).abs() < 1e-9);
    }

    #[test]
    fn selected_inverse_matches_dense() {
        let n = 35;
        let a = random_sparse_spd(n, 0.06, 3);
        let f = factor_of(&a);
        let inv = a.clone().try_inverse().unwrap();
        let z = f.selected_inverse(0..n, n);
        for j in 0..n {
            assert!((z.diag(j) - inv[(j, j)]).abs() < 1e-9);
            for i in j..n {
                if let Some(v) = z.get(i, j) {
                    assert!((v - inv[(i, j)]).abs() < 1e-9);
                }
            }
        }
        let k = 20;
        let lead_inv = a.view((0, 0), (k, k)).into_owned().try_inverse().unwrap();
        let zl = f.selected_inverse(0..k, k);
        for j in 0..k {
            assert!((zl.diag(j) - lead_inv[(j, j)]).abs() < 1e-9);
        }
        let zt = f.selected_inverse(k..n, n);
        for j in k..n {
            for i in k..n {
                if let Some(v) = zt.get(i, j) {
                    assert!((v - inv[(i, j)]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn not_positive_definite_is_reported() {
        let a = [1.0, 2.0, 2.0, 1.0];
        let (sym, vals) = from_dense(&a, 2);
        assert!(matches!(
            LdlFactor::factorize(sym, vals),
            Err(SparseError::NotPositiveDefinite { column: 1, .. })
        ));
    }

    #[test]
    fn correlated_draws_have_inverse_covariance() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let f = factor_of(&a);
        let inv = a.clone().try_inverse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 200_000;
        let mut cov = DMatrix::<f64>::zeros(3, 3);
        for _ in 0..n {
            let mut z: Vec<f64> = (0..3).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
            f.correlate_in_place(&mut z);
            let v = DVector::from_vec(z);
            cov += &v * v.transpose();
        }
        cov /= n as f64;
        for i in 0..3 {
            for j in 0..3 {
                assert!((cov[(i, j)] - inv[(i, j)]).abs() < 0.01, "{i},{j}");
            }
        }
    }

    proptest! {
        #[test]
        fn random_patterns_solve(seed in any::<u64>(), n in 2usize..25) {
            let a = random_sparse_spd(n, 0.15, seed);
            let f = factor_of(&a);
            let b: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
            let x = f.solve(&b);
            let r = &a * DVector::from_vec(x) - DVector::from_vec(b);
            prop_assert!(r.amax() < 1e-8);
        }
    }
}
