//! Sparse matrices and the linear solvers used by the Newton iteration.

use faer::prelude::Solve;
use faer::sparse::{SparseColMat, Triplet};

use crate::error::{Error, Result};

/// Compressed sparse row matrix. Column indices within a row are sorted and
/// unique.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from (row, col, value) entries; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in entries {
            assert!(r < nrows && c < ncols, "entry ({r}, {c}) outside {nrows}x{ncols}");
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; entries.len()];
        let mut vals = vec![0.0; entries.len()];
        let mut next = counts.clone();
        for &(r, c, v) in entries {
            cols[next[r]] = c;
            vals[next[r]] = v;
            next[r] += 1;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        row_ptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for r in 0..nrows {
            let (lo, hi) = (counts[r], counts[r + 1]);
            order.clear();
            order.extend(lo..hi);
            order.sort_unstable_by_key(|&k| cols[k]);
            for &k in &order {
                if col_idx.len() > row_ptr[r] && *col_idx.last().unwrap() == cols[k] {
                    *values.last_mut().unwrap() += vals[k];
                } else {
                    col_idx.push(cols[k]);
                    values.push(vals[k]);
                }
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        let entries: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, n, &entries)
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

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            out.extend(self.row(i).map(|(j, v)| (i, j, v)));
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    pub fn transpose(&self) -> SparseMatrix {
        let entries: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        SparseMatrix::from_triplets(self.ncols, self.nrows, &entries)
    }

    /// self * diag(d)
    pub fn scale_columns(&self, d: &[f64]) -> SparseMatrix {
        assert_eq!(d.len(), self.ncols);
        let mut out = self.clone();
        for (v, &j) in out.values.iter_mut().zip(&self.col_idx) {
            *v *= d[j];
        }
        out
    }

    /// Sparse product self * other.
    pub fn matmul(&self, other: &SparseMatrix) -> SparseMatrix {
        assert_eq!(self.ncols, other.nrows);
        let mut acc = vec![0.0; other.ncols];
        let mut mark = vec![usize::MAX; other.ncols];
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut touched = Vec::new();
        for i in 0..self.nrows {
            touched.clear();
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = 0.0;
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                col_idx.push(j);
                values.push(acc[j]);
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix {
            nrows: self.nrows,
            ncols: other.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Rows and columns restricted to the given index lists.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> SparseMatrix {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (new, &old) in cols.iter().enumerate() {
            col_map[old] = new;
        }
        let mut entries = Vec::new();
        for (new_r, &r) in rows.iter().enumerate() {
            for (c, v) in self.row(r) {
                if col_map[c] != usize::MAX {
                    entries.push((new_r, col_map[c], v));
                }
            }
        }
        SparseMatrix::from_triplets(rows.len(), cols.len(), &entries)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.nrows == self.ncols
            && (0..self.nrows).all(|i| self.row(i).all(|(j, v)| (v - self.get(j, i)).abs() <= tol))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Jacobi-preconditioned conjugate gradients for a symmetric positive
/// definite matrix. Stops when ‖r‖ ≤ tol·‖b‖.
pub fn solve_spd(a: &SparseMatrix, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "matrix {}x{}, right-hand side {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let mut x = vec![0.0; n];
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(x);
    }
    let diag = a.diagonal();
    if let Some(i) = diag.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::SingularSystem(format!("non-positive diagonal entry at row {i}")));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, d)| ri / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let max_iter = 20 * n.max(10);
    let target = tol * bnorm;
    for _ in 0..max_iter {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::SingularSystem("matrix is not positive definite".into()));
        }
        let step = rz / pap;
        axpy(step, &p, &mut x);
        axpy(-step, &ap, &mut r);
        if norm(&r) <= target {
            return Ok(x);
        }
        for ((zi, ri), d) in z.iter_mut().zip(&r).zip(&diag) {
            *zi = ri / d;
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        residual: norm(&r) / bnorm,
    })
}

/// Which method `solve_coupled` uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoupledSolver {
    /// Sparse LU of the full block system.
    #[default]
    DirectLu,
    /// GMRES on the Schur complement in the adjoint variable, with inner
    /// CG solves for the stiffness matrix.
    SchurGmres,
}

/// Solves the block system
///
/// ```text
/// [  A  -B ] [x]   [r1]
/// [ -M   A ] [z] = [r2]
/// ```
///
/// with A symmetric positive definite, B symmetric positive semidefinite and
/// M symmetric positive definite. Returns (x, z).
pub fn solve_coupled(
    a: &SparseMatrix,
    b: &SparseMatrix,
    m: &SparseMatrix,
    r1: &[f64],
    r2: &[f64],
    method: CoupledSolver,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = a.nrows();
    for (name, mat) in [("A", a), ("B", b), ("M", m)] {
        if mat.nrows() != n || mat.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "block {name} is {}x{}, expected {n}x{n}",
                mat.nrows(),
                mat.ncols()
            )));
        }
    }
    if r1.len() != n || r2.len() != n {
        return Err(Error::DimensionMismatch("right-hand side length".into()));
    }
    let (x, z) = match method {
        CoupledSolver::DirectLu => coupled_lu(a, b, m, r1, r2)?,
        CoupledSolver::SchurGmres => coupled_schur(a, b, m, r1, r2)?,
    };
    let (res, scale) = coupled_residual(a, b, m, r1, r2, &x, &z);
    if !(res <= 1e-8 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::NotConverged {
            iterations: 1,
            residual: res / scale,
        });
    }
    Ok((x, z))
}

fn coupled_residual(
    a: &SparseMatrix,
    b: &SparseMatrix,
    m: &SparseMatrix,
    r1: &[f64],
    r2: &[f64],
    x: &[f64],
    z: &[f64],
) -> (f64, f64) {
    let ax = a.mul_vec(x);
    let bz = b.mul_vec(z);
    let mx = m.mul_vec(x);
    let az = a.mul_vec(z);
    let mut s = 0.0;
    for i in 0..x.len() {
        s += (ax[i] - bz[i] - r1[i]).powi(2) + (az[i] - mx[i] - r2[i]).powi(2);
    }
    let scale = (norm(r1).powi(2) + norm(r2).powi(2)).sqrt();
    (s.sqrt(), scale)
}

fn coupled_lu(
    a: &SparseMatrix,
    b: &SparseMatrix,
    m: &SparseMatrix,
    r1: &[f64],
    r2: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = a.nrows();
    let mut entries = Vec::with_capacity(2 * a.nnz() + b.nnz() + m.nnz());
    for (i, j, v) in a.triplets() {
        entries.push(Triplet::new(i, j, v));
        entries.push(Triplet::new(n + i, n + j, v));
    }
    for (i, j, v) in b.triplets() {
        entries.push(Triplet::new(i, n + j, -v));
    }
    for (i, j, v) in m.triplets() {
        entries.push(Triplet::new(n + i, j, -v));
    }
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(2 * n, 2 * n, &entries)
        .map_err(|e| Error::SingularSystem(format!("assembling block matrix: {e:?}")))?;
    let lu = mat
        .sp_lu()
        .map_err(|e| Error::SingularSystem(format!("sparse LU failed: {e:?}")))?;
    let rhs = faer::col::Col::from_fn(2 * n, |i| if i < n { r1[i] } else { r2[i - n] });
    let mut sol = lu.solve(&rhs);
    // one step of iterative refinement
    let x: Vec<f64> = (0..n).map(|i| sol[i]).collect();
    let z: Vec<f64> = (0..n).map(|i| sol[n + i]).collect();
    let (res, scale) = coupled_residual(a, b, m, r1, r2, &x, &z);
    if res > 1e-13 * scale {
        let ax = a.mul_vec(&x);
        let bz = b.mul_vec(&z);
        let mx = m.mul_vec(&x);
        let az = a.mul_vec(&z);
        let corr = faer::col::Col::from_fn(2 * n, |i| {
            if i < n {
                r1[i] - (ax[i] - bz[i])
            } else {
                let k = i - n;
                r2[k] - (az[k] - mx[k])
            }
        });
        let d = lu.solve(&corr);
        sol += d;
    }
    let x = (0..n).map(|i| sol[i]).collect();
    let z = (0..n).map(|i| sol[n + i]).collect();
    Ok((x, z))
}

fn coupled_schur(
    a: &SparseMatrix,
    b: &SparseMatrix,
    m: &SparseMatrix,
    r1: &[f64],
    r2: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    // x = A⁻¹(r1 + B z), (A - M A⁻¹ B) z = r2 + M A⁻¹ r1
    let inner = 1e-13;
    let a_inv_r1 = solve_spd(a, r1, inner)?;
    let mut rhs = m.mul_vec(&a_inv_r1);
    axpy(1.0, r2, &mut rhs);
    let schur = |v: &[f64]| -> Result<Vec<f64>> {
        let w = solve_spd(a, &b.mul_vec(v), inner)?;
        let mut out = a.mul_vec(v);
        axpy(-1.0, &m.mul_vec(&w), &mut out);
        Ok(out)
    };
    // right preconditioning with A⁻¹: S A⁻¹ u = rhs, z = A⁻¹ u
    let op = |u: &[f64]| -> Result<Vec<f64>> { schur(&solve_spd(a, u, inner)?) };
    let u = gmres(op, &rhs, 1e-12, 60, 2000)?;
    let z = solve_spd(a, &u, inner)?;
    let mut t = b.mul_vec(&z);
    axpy(1.0, r1, &mut t);
    let x = solve_spd(a, &t, inner)?;
    Ok((x, z))
}

/// Restarted GMRES with modified Gram-Schmidt.
pub fn gmres<F>(op: F, b: &[f64], tol: f64, restart: usize, max_iter: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = b.len();
    let mut x = vec![0.0; n];
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut total = 0;
    while total < max_iter {
        let ax = op(&x)?;
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        if beta / bnorm <= tol {
            return Ok(x);
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|ri| ri / beta).collect()];
        let mut h = vec![vec![0.0; restart]; restart + 1];
        let mut cs = vec![0.0; restart];
        let mut sn = vec![0.0; restart];
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..restart {
            total += 1;
            let mut w = op(&v[k])?;
            for (i, vi) in v.iter().enumerate() {
                h[i][k] = dot(&w, vi);
                axpy(-h[i][k], vi, &mut w);
            }
            let wnorm = norm(&w);
            h[k + 1][k] = wnorm;
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let denom = h[k][k].hypot(h[k + 1][k]);
            cs[k] = h[k][k] / denom;
            sn[k] = h[k + 1][k] / denom;
            h[k][k] = denom;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            if g[k + 1].abs() / bnorm <= tol || wnorm == 0.0 || total >= max_iter {
                break;
            }
            v.push(w.iter().map(|wi| wi / wnorm).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[i][j] * y[j];
            }
            y[i] = s / h[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            axpy(*yj, &v[j], &mut x);
        }
    }
    let ax = op(&x)?;
    let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let final_res = norm(&r) / bnorm;
    if final_res <= tol {
        Ok(x)
    } else {
        Err(Error::NotConverged {
            iterations: total,
            residual: final_res,
        })
    }
}

/// Direct solve of a general square sparse system.
pub fn solve_lu(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::DimensionMismatch("solve_lu expects a square system".into()));
    }
    let entries: Vec<_> = a.triplets().into_iter().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &entries)
        .map_err(|e| Error::SingularSystem(format!("{e:?}")))?;
    let lu = mat.sp_lu().map_err(|e| Error::SingularSystem(format!("{e:?}")))?;
    let rhs = faer::col::Col::from_fn(n, |i| b[i]);
    let x = lu.solve(&rhs);
    Ok((0..n).map(|i| x[i]).collect())
}
