//! Sparse storage for the affinity matrix over putative associations.
//!
//! Only unmasked off-diagonal pairs are stored (their value may still be zero,
//! e.g. when a similarity score vanishes). Every pair that is not stored is part
//! of the zero-constraint mask: the two associations may not both be selected.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AffinityProblem {
    diag: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl AffinityProblem {
    /// `rows[p]` lists the unmasked neighbours `(q, M_pq)` of node `p`, `q != p`.
    pub fn from_rows(diag: Vec<f64>, rows: Vec<Vec<(usize, f64)>>) -> Self {
        assert_eq!(diag.len(), rows.len());
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        for mut row in rows {
            row.sort_by_key(|&(q, _)| q);
            for (q, v) in row {
                cols.push(q);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self {
            diag,
            row_ptr,
            cols,
            vals,
        }
    }

    /// Dense input; an off-diagonal entry that is exactly zero is masked.
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        Self::from_dense_with_mask(m, |p, q| m[(p, q)] != 0.0)
    }

    /// Dense input with an explicit `allowed(p, q)` predicate for the constraint set.
    pub fn from_dense_with_mask(m: &DMatrix<f64>, allowed: impl Fn(usize, usize) -> bool) -> Self {
        let n = m.nrows();
        assert_eq!(n, m.ncols(), "affinity matrix must be square");
        let diag = (0..n).map(|p| m[(p, p)]).collect();
        let rows = (0..n)
            .map(|p| {
                (0..n)
                    .filter(|&q| q != p && allowed(p, q))
                    .map(|q| (q, m[(p, q)]))
                    .collect()
            })
            .collect();
        Self::from_rows(diag, rows)
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    /// Stored off-diagonal entries (both triangles).
    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn neighbors(&self, p: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[p]..self.row_ptr[p + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    fn find(&self, p: usize, q: usize) -> Option<usize> {
        let lo = self.row_ptr[p];
        let hi = self.row_ptr[p + 1];
        self.cols[lo..hi].binary_search(&q).ok().map(|k| lo + k)
    }

    /// `M_pq`; masked pairs read as zero.
    pub fn get(&self, p: usize, q: usize) -> f64 {
        if p == q {
            return self.diag[p];
        }
        self.find(p, q).map_or(0.0, |k| self.vals[k])
    }

    /// True when `p` and `q` may be selected together.
    pub fn consistent(&self, p: usize, q: usize) -> bool {
        p == q || self.find(p, q).is_some()
    }

    pub fn is_masked(&self, p: usize, q: usize) -> bool {
        !self.consistent(p, q)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for p in 0..n {
            m[(p, p)] = self.diag[p];
            for (q, v) in self.neighbors(p) {
                m[(p, q)] = v;
            }
        }
        m
    }

    /// Values and the constraint pattern must both be symmetric.
    pub fn check_symmetric(&self, tol: f64) -> Result<()> {
        for p in 0..self.n() {
            for (q, v) in self.neighbors(p) {
                if q >= self.n() {
                    return Err(Error::ContractViolation(format!("column {q} out of range")));
                }
                match self.find(q, p) {
                    Some(k) if (self.vals[k] - v).abs() <= tol => {}
                    Some(k) => {
                        return Err(Error::ContractViolation(format!(
                            "affinity matrix not symmetric: M[{p},{q}] = {v} but M[{q},{p}] = {}",
                            self.vals[k]
                        )))
                    }
                    None => {
                        return Err(Error::ContractViolation(format!(
                            "constraint mask not symmetric at ({p}, {q})"
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    /// `out = M u`.
    pub fn matvec(&self, u: &[f64], out: &mut [f64]) {
        for p in 0..self.n() {
            let mut acc = self.diag[p] * u[p];
            for k in self.row_ptr[p]..self.row_ptr[p + 1] {
                acc += self.vals[k] * u[self.cols[k]];
            }
            out[p] = acc;
        }
    }

    /// `out_p = sum of u_q over masked partners q of p` (the complement-mask product).
    pub fn masked_sum(&self, u: &[f64], out: &mut [f64]) {
        let total: f64 = u.iter().sum();
        for p in 0..self.n() {
            let mut allowed = u[p];
            for k in self.row_ptr[p]..self.row_ptr[p + 1] {
                allowed += u[self.cols[k]];
            }
            out[p] = (total - allowed).max(0.0);
        }
    }

    /// Whether no two members of `nodes` are masked against each other.
    pub fn is_feasible(&self, nodes: &[usize]) -> bool {
        nodes
            .iter()
            .enumerate()
            .all(|(a, &p)| nodes[a + 1..].iter().all(|&q| self.consistent(p, q)))
    }

    /// `uᵀ M u / uᵀ u` for the binary indicator of `nodes`.
    pub fn density(&self, nodes: &[usize]) -> f64 {
        if nodes.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        for (a, &p) in nodes.iter().enumerate() {
            total += self.diag[p];
            for &q in &nodes[a + 1..] {
                total += 2.0 * self.get(p, q);
            }
        }
        total / nodes.len() as f64
    }

    /// Every entry multiplied by `gamma`; the constraint pattern is unchanged.
    pub fn scaled(&self, gamma: f64) -> Self {
        Self {
            diag: self.diag.iter().map(|d| d * gamma).collect(),
            row_ptr: self.row_ptr.clone(),
            cols: self.cols.clone(),
            vals: self.vals.iter().map(|v| v * gamma).collect(),
        }
    }

    /// Relabel nodes so that old node `p` becomes `perm[p]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n();
        assert_eq!(perm.len(), n);
        let mut diag = vec![0.0; n];
        let mut rows = vec![Vec::new(); n];
        for p in 0..n {
            diag[perm[p]] = self.diag[p];
            rows[perm[p]] = self.neighbors(p).map(|(q, v)| (perm[q], v)).collect();
        }
        Self::from_rows(diag, rows)
    }
}
