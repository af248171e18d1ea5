//! Compressed sparse rows and a (Jacobi-)preconditioned conjugate gradient.

use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Assembles from `(row, col, value)` triplets; duplicates are summed in
    /// input order so assembly is deterministic.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            counts[r + 1] += 1;
        }
        for r in 0..nrows {
            counts[r + 1] += counts[r];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            cols[next[r]] = c;
            vals[next[r]] = v;
            next[r] += 1;
        }

        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for r in 0..nrows {
            row.clear();
            row.extend((counts[r]..counts[r + 1]).map(|k| (cols[k], vals[k])));
            // stable: equal columns keep input order
            row.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut acc = 0.0;
                while k < row.len() && row[k].0 == c {
                    acc += row[k].1;
                    k += 1;
                }
                indices.push(c);
                values.push(acc);
            }
            indptr.push(indices.len());
        }
        CsrMatrix { nrows, ncols, indptr, indices, values }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.iter().position(|&k| k == c).map_or(0.0, |k| vals[k])
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        par::for_each_mut(y, |r, out| {
            let (cols, vals) = self.row(r);
            *out = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        });
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            triplets.extend(cols.iter().zip(vals).map(|(&c, &v)| (c, r, v)));
        }
        CsrMatrix::from_triplets(self.ncols, self.nrows, &triplets)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|r| self.get(r, r)).collect()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                m[(r, c)] += v;
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    /// `pᵀAp <= 0` was hit before convergence.
    pub breakdown: bool,
}

/// Solves `A x = b` for symmetric positive (semi-)definite `A` given as a
/// matrix-vector product, starting from the contents of `x`.
///
/// Stops once `|b - A x| <= tol |b|`. An optional diagonal enables Jacobi
/// preconditioning; nonpositive diagonal entries are treated as 1.
pub fn conjugate_gradient<A>(
    apply: A,
    b: &[f64],
    x: &mut [f64],
    diagonal: Option<&[f64]>,
    tol: f64,
    max_iters: usize,
) -> CgOutcome
where
    A: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    assert_eq!(x.len(), n);
    let b_norm = par::norm(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return CgOutcome { iterations: 0, relative_residual: 0.0, converged: true, breakdown: false };
    }

    let inv_diag: Option<Vec<f64>> =
        diagonal.map(|d| d.iter().map(|&v| if v > 0.0 { 1.0 / v } else { 1.0 }).collect());
    let precondition = |r: &[f64], z: &mut [f64]| match &inv_diag {
        Some(m) => par::for_each_mut(z, |i, zi| *zi = m[i] * r[i]),
        None => z.copy_from_slice(r),
    };

    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = par::dot(&r, &z);
    let mut ap = ax;

    let mut res = par::norm(&r) / b_norm;
    let mut iterations = 0;
    while res > tol && iterations < max_iters {
        apply(&p, &mut ap);
        let pap = par::dot(&p, &ap);
        if !(pap > 0.0) {
            return CgOutcome { iterations, relative_residual: res, converged: false, breakdown: true };
        }
        let alpha = rz / pap;
        par::for_each_mut(x, |i, xi| *xi += alpha * p[i]);
        par::for_each_mut(&mut r, |i, ri| *ri -= alpha * ap[i]);
        precondition(&r, &mut z);
        let rz_next = par::dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        par::for_each_mut(&mut p, |i, pi| *pi = z[i] + beta * *pi);
        iterations += 1;
        res = par::norm(&r) / b_norm;
    }
    CgOutcome { iterations, relative_residual: res, converged: res <= tol, breakdown: false }
}
