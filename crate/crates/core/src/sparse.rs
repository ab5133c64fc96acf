//! Sparse symmetric matrices and their Cholesky factorization.
//!
//! Symmetric matrices are held as the upper triangle in compressed-column
//! form, row indices sorted within each column. The factorization is the
//! up-looking algorithm driven by the elimination tree; the symbolic analysis
//! is done once per sparsity pattern and reused for every numeric refactor.
//! No fill-reducing permutation is applied: callers order unknowns so that
//! natural order is already good (block-arrow structure, local blocks first).

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Upper triangle of a symmetric matrix in CSC form.
#[derive(Debug, Clone, PartialEq)]
pub struct SymCsc {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SymCsc {
    /// Builds from `(row, col, value)` triplets; entries are mirrored into the
    /// upper triangle and duplicates summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(r, c, v) in triplets {
            if r >= n || c >= n {
                return Err(Error::IndexOutOfRange { index: r.max(c), len: n });
            }
            let (r, c) = if r <= c { (r, c) } else { (c, r) };
            cols[c].push((r, v));
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for col in cols.iter_mut() {
            col.sort_by_key(|e| e.0);
            let mut last = NONE;
            for &(r, v) in col.iter() {
                if r == last {
                    *values.last_mut().unwrap() += v;
                } else {
                    row_idx.push(r);
                    values.push(v);
                    last = r;
                }
            }
            col_ptr.push(row_idx.len());
        }
        Ok(Self { n, col_ptr, row_idx, values })
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// Position of entry `(r, c)`, `r <= c`, in `values`.
    pub fn find(&self, r: usize, c: usize) -> Option<usize> {
        let (r, c) = if r <= c { (r, c) } else { (c, r) };
        let s = self.col_ptr[c];
        let e = self.col_ptr[c + 1];
        self.row_idx[s..e].binary_search(&r).ok().map(|p| s + p)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.find(r, c).map_or(0.0, |p| self.values[p])
    }

    /// `y = A x` using both triangles.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..self.n {
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[p];
                let v = self.values[p];
                y[r] += v * x[c];
                if r != c {
                    y[c] += v * x[r];
                }
            }
        }
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for c in 0..self.n {
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[p];
                let v = self.values[p] * x[r] * x[c];
                s += if r == c { v } else { 2.0 * v };
            }
        }
        s
    }

    pub fn same_pattern(&self, other: &SymCsc) -> bool {
        self.n == other.n && self.col_ptr == other.col_ptr && self.row_idx == other.row_idx
    }

    #[cfg(test)]
    pub(crate) fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for c in 0..self.n {
            for p in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[p];
                m[(r, c)] = self.values[p];
                m[(c, r)] = self.values[p];
            }
        }
        m
    }
}

/// Elimination tree and column structure of `L`, reusable across numeric
/// factorizations of matrices with the same pattern.
#[derive(Debug, Clone)]
pub struct CholeskySymbolic {
    n: usize,
    parent: Vec<usize>,
    l_col_ptr: Vec<usize>,
    a_col_ptr: Vec<usize>,
    a_row_idx: Vec<usize>,
}

impl CholeskySymbolic {
    pub fn analyze(a: &SymCsc) -> Self {
        let n = a.n;
        let parent = etree(a);
        // Column counts from the row patterns of L.
        let mut counts = vec![1usize; n];
        let mut stack = vec![0usize; n];
        let mut mark = vec![NONE; n];
        for k in 0..n {
            let top = ereach(a, k, &parent, &mut stack, &mut mark);
            for &j in &stack[top..] {
                counts[j] += 1;
            }
        }
        let mut l_col_ptr = Vec::with_capacity(n + 1);
        l_col_ptr.push(0);
        for c in counts {
            l_col_ptr.push(l_col_ptr.last().unwrap() + c);
        }
        Self {
            n,
            parent,
            l_col_ptr,
            a_col_ptr: a.col_ptr.clone(),
            a_row_idx: a.row_idx.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz_l(&self) -> usize {
        self.l_col_ptr[self.n]
    }

    pub fn factor(&self, a: &SymCsc) -> Result<CholeskyFactor> {
        if a.n != self.n || a.col_ptr != self.a_col_ptr || a.row_idx != self.a_row_idx {
            return Err(Error::Dimension("matrix pattern differs from the analyzed pattern".into()));
        }
        let n = self.n;
        let nnz = self.nnz_l();
        let mut li = vec![0usize; nnz];
        let mut lx = vec![0.0f64; nnz];
        let mut next = self.l_col_ptr[..n].to_vec();
        let mut x = vec![0.0f64; n];
        let mut stack = vec![0usize; n];
        let mut mark = vec![NONE; n];
        for k in 0..n {
            let top = ereach(a, k, &self.parent, &mut stack, &mut mark);
            for p in a.col_ptr[k]..a.col_ptr[k + 1] {
                x[a.row_idx[p]] = a.values[p];
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &i in &stack[top..] {
                let lki = x[i] / lx[self.l_col_ptr[i]];
                x[i] = 0.0;
                for p in self.l_col_ptr[i] + 1..next[i] {
                    x[li[p]] -= lx[p] * lki;
                }
                d -= lki * lki;
                let p = next[i];
                next[i] += 1;
                li[p] = k;
                lx[p] = lki;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::CholeskyFailed(k));
            }
            let p = next[k];
            next[k] += 1;
            li[p] = k;
            lx[p] = d.sqrt();
        }
        Ok(CholeskyFactor { n, col_ptr: self.l_col_ptr.clone(), row_idx: li, values: lx })
    }
}

fn etree(a: &SymCsc) -> Vec<usize> {
    let n = a.n;
    let mut parent = vec![NONE; n];
    let mut ancestor = vec![NONE; n];
    for k in 0..n {
        for p in a.col_ptr[k]..a.col_ptr[k + 1] {
            let mut i = a.row_idx[p];
            while i != NONE && i < k {
                let inext = ancestor[i];
                ancestor[i] = k;
                if inext == NONE {
                    parent[i] = k;
                }
                i = inext;
            }
        }
    }
    parent
}

/// Nonzero pattern of row `k` of `L` (columns `< k`) in topological order,
/// written to `stack[top..]`.
fn ereach(a: &SymCsc, k: usize, parent: &[usize], stack: &mut [usize], mark: &mut [usize]) -> usize {
    let n = a.n;
    let mut top = n;
    mark[k] = k;
    for p in a.col_ptr[k]..a.col_ptr[k + 1] {
        let mut i = a.row_idx[p];
        if i > k {
            continue;
        }
        let mut len = 0;
        while mark[i] != k {
            stack[len] = i;
            len += 1;
            mark[i] = k;
            i = parent[i];
        }
        while len > 0 {
            top -= 1;
            len -= 1;
            stack[top] = stack[len];
        }
    }
    top
}

/// Lower-triangular factor `L` with `A = L Lᵀ`, stored by columns with the
/// diagonal first in each column.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CholeskyFactor {
    pub fn n(&self) -> usize {
        self.n
    }

    /// `log |A|`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|j| self.values[self.col_ptr[j]].ln()).sum::<f64>()
    }

    /// Solves `L y = b` in place.
    pub fn solve_l(&self, b: &mut [f64]) {
        for j in 0..self.n {
            let s = self.col_ptr[j];
            b[j] /= self.values[s];
            let bj = b[j];
            for p in s + 1..self.col_ptr[j + 1] {
                b[self.row_idx[p]] -= self.values[p] * bj;
            }
        }
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn solve_lt(&self, b: &mut [f64]) {
        for j in (0..self.n).rev() {
            let s = self.col_ptr[j];
            let mut v = b[j];
            for p in s + 1..self.col_ptr[j + 1] {
                v -= self.values[p] * b[self.row_idx[p]];
            }
            b[j] = v / self.values[s];
        }
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        self.solve_l(b);
        self.solve_lt(b);
    }

    /// Entries of `A⁻¹` on the pattern of `L` (Takahashi recursion).
    pub fn selected_inverse(&self) -> SelectedInverse {
        let n = self.n;
        let mut sx = vec![0.0f64; self.values.len()];
        let find = |r: usize, c: usize| -> usize {
            let s = self.col_ptr[c];
            let e = self.col_ptr[c + 1];
            s + self.row_idx[s..e].binary_search(&r).expect("pattern closed under fill")
        };
        for i in (0..n).rev() {
            let s = self.col_ptr[i];
            let e = self.col_ptr[i + 1];
            let lii = self.values[s];
            // Off-diagonal entries of column i, from the bottom up.
            for pj in (s + 1..e).rev() {
                let j = self.row_idx[pj];
                let mut acc = 0.0;
                for pk in s + 1..e {
                    let k = self.row_idx[pk];
                    let sjk = if k >= j { sx[find(k, j)] } else { sx[find(j, k)] };
                    acc += self.values[pk] * sjk;
                }
                sx[pj] = -acc / lii;
            }
            let mut acc = 0.0;
            for pk in s + 1..e {
                acc += self.values[pk] * sx[pk];
            }
            sx[s] = 1.0 / (lii * lii) - acc / lii;
        }
        SelectedInverse { col_ptr: self.col_ptr.clone(), row_idx: self.row_idx.clone(), values: sx }
    }
}

/// `A⁻¹` restricted to the pattern of the Cholesky factor.
#[derive(Debug, Clone)]
pub struct SelectedInverse {
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SelectedInverse {
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.col_ptr.len() - 1).map(|j| self.values[self.col_ptr[j]]).collect()
    }

    /// Entry `(r, c)` if it lies on the pattern.
    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        let (r, c) = if r >= c { (r, c) } else { (c, r) };
        let s = self.col_ptr[c];
        let e = self.col_ptr[c + 1];
        self.row_idx[s..e].binary_search(&r).ok().map(|p| self.values[s + p])
    }
}
