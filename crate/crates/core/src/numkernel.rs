//! Small dense linear algebra: matrices, symmetric eigendecomposition
//! (cyclic Jacobi), Cholesky, LU solves and the continuous Lyapunov equation.
//!
//! Everything here is sized for desk-scale problems (a few hundred rows at
//! most) and favours robustness over asymptotic speed.

use std::fmt;
use std::ops::{Index, IndexMut};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is singular (pivot {pivot:e} below threshold {threshold:e})")]
    Singular { pivot: f64, threshold: f64 },
    #[error("Jacobi eigensolver did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("Lyapunov equation has no unique solution")]
    NoUniqueSolution,
}

/// Row-major dense real matrix.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumError> {
        if data.len() != rows * cols {
            return Err(NumError::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input; intended for
    /// literals in code and tests.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged matrix literal");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn column(v: &[f64]) -> Self {
        Self { rows: v.len(), cols: 1, data: v.to_vec() }
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, NumError> {
        if self.cols != other.rows {
            return Err(NumError::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &o) in dst.iter_mut().zip(orow) {
                    *d += a * o;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>, NumError> {
        if v.len() != self.cols {
            return Err(NumError::Dimension(format!(
                "vector of length {} for {} columns",
                v.len(),
                self.cols
            )));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn add(&self, other: &Self) -> Result<Self, NumError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, NumError> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self, NumError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(NumError::Dimension(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * c).collect() }
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Symmetric part `(A + Aᵀ)/2` as a packed symmetric matrix.
    pub fn sym_part(&self) -> Result<SymMatrix, NumError> {
        if !self.is_square() {
            return Err(NumError::Dimension("symmetric part of a non-square matrix".into()));
        }
        let n = self.rows;
        let mut s = SymMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                s.set(i, j, 0.5 * (self[(i, j)] + self[(j, i)]));
            }
        }
        Ok(s)
    }

    /// Numerical rank via Gaussian elimination with full pivoting.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let mut a = self.clone();
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        let (m, n) = (a.rows, a.cols);
        let mut rank = 0;
        let mut row = 0;
        let mut used_cols = vec![false; n];
        while row < m {
            let mut best = (0.0, 0, 0);
            for i in row..m {
                for (j, used) in used_cols.iter().enumerate() {
                    if !used && a[(i, j)].abs() > best.0 {
                        best = (a[(i, j)].abs(), i, j);
                    }
                }
            }
            if best.0 <= rel_tol * scale {
                break;
            }
            let (_, pi, pj) = best;
            for j in 0..n {
                a.data.swap(row * n + j, pi * n + j);
            }
            used_cols[pj] = true;
            let piv = a[(row, pj)];
            for i in row + 1..m {
                let f = a[(i, pj)] / piv;
                if f != 0.0 {
                    for j in 0..n {
                        let v = a[(row, j)];
                        a[(i, j)] -= f * v;
                    }
                }
            }
            rank += 1;
            row += 1;
        }
        rank
    }

    pub fn inverse(&self) -> Result<Self, NumError> {
        if !self.is_square() {
            return Err(NumError::Dimension("inverse of a non-square matrix".into()));
        }
        let lu = Lu::factor(self)?;
        let n = self.rows;
        let mut inv = Self::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = lu.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        Ok(inv)
    }

    /// Integer power of a square matrix.
    pub fn pow(&self, k: usize) -> Result<Self, NumError> {
        if !self.is_square() {
            return Err(NumError::Dimension("power of a non-square matrix".into()));
        }
        let mut out = Self::identity(self.rows);
        for _ in 0..k {
            out = out.matmul(self)?;
        }
        Ok(out)
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for i in 0..self.rows {
            if i > 0 {
                write!(f, "; ")?;
            }
            for j in 0..self.cols {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{}", self[(i, j)])?;
            }
        }
        write!(f, "]")
    }
}

/// Symmetric matrix stored as its packed upper triangle (row by row).
#[derive(Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    packed: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, packed: vec![0.0; dim * (dim + 1) / 2] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut s = Self::zeros(dim);
        for i in 0..dim {
            s.set(i, i, 1.0);
        }
        s
    }

    /// Builds from a dense matrix that must already be symmetric to `tol`
    /// (relative to its largest entry).
    pub fn from_dense(m: &DenseMatrix, tol: f64) -> Result<Self, NumError> {
        if !m.is_square() {
            return Err(NumError::Dimension("non-square matrix".into()));
        }
        let scale = m.max_abs().max(1.0);
        for i in 0..m.rows() {
            for j in i + 1..m.cols() {
                if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                    return Err(NumError::Dimension(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        m.sym_part()
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        Self::from_dense(&DenseMatrix::from_rows(rows), 0.0).expect("symmetric literal")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * self.dim - i * (i + 1) / 2 + j
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.packed[self.offset(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.offset(i, j);
        self.packed[k] = v;
    }

    pub fn packed(&self) -> &[f64] {
        &self.packed
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let n = self.dim;
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = self.get(i, j);
            }
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.packed.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_eigenvalue(&self) -> Result<f64, NumError> {
        if self.dim == 0 {
            return Ok(f64::INFINITY);
        }
        Ok(eig_sym(self)?.0[0])
    }
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.to_dense().fmt(f)
    }
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvectors as the columns of the returned matrix.
pub fn eig_sym(a: &SymMatrix) -> Result<(Vec<f64>, DenseMatrix), NumError> {
    let n = a.dim();
    if n == 0 {
        return Err(NumError::Dimension("empty matrix".into()));
    }
    let mut m = a.to_dense();
    let mut v = DenseMatrix::identity(n);
    let norm = m.frobenius();
    if norm == 0.0 {
        return Ok((vec![0.0; n], v));
    }
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * norm {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(NumError::NoConvergence(JACOBI_MAX_SWEEPS));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vecs = DenseMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vecs[(k, dst)] = v[(k, src)];
        }
    }
    Ok((values, vecs))
}

/// Pivot threshold below which a Cholesky factorization is declared failed.
pub const CHOLESKY_PIVOT_TOL: f64 = 1e-12;

/// Lower-triangular Cholesky factor, or `None` when the matrix is not
/// positive definite (a pivot falls below `1e-12·max(1, ‖A‖)`).
pub fn cholesky(a: &SymMatrix) -> Option<DenseMatrix> {
    let n = a.dim();
    let tol = CHOLESKY_PIVOT_TOL * a.max_abs().max(1.0);
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > tol) {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// LU factorization with partial pivoting.
pub(crate) struct Lu {
    lu: DenseMatrix,
    perm: Vec<usize>,
}

impl Lu {
    pub(crate) fn factor(a: &DenseMatrix) -> Result<Self, NumError> {
        if !a.is_square() {
            return Err(NumError::Dimension("LU of a non-square matrix".into()));
        }
        let n = a.rows();
        let threshold = 1e-12 * a.max_abs();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pv) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pv <= threshold || pv == 0.0 {
                return Err(NumError::Singular { pivot: pv, threshold });
            }
            if p != k {
                for j in 0..n {
                    lu.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let piv = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / piv;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        let v = lu[(k, j)];
                        lu[(i, j)] -= f * v;
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub(crate) fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.perm.len();
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                x[i] -= self.lu[(i, k)] * x[k];
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                x[i] -= self.lu[(i, k)] * x[k];
            }
            x[i] /= self.lu[(i, i)];
        }
        x
    }
}

/// Solves `A x = b` by LU with partial pivoting.
pub fn solve_linear(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>, NumError> {
    if b.len() != a.rows() {
        return Err(NumError::Dimension(format!(
            "right-hand side of length {} for {} rows",
            b.len(),
            a.rows()
        )));
    }
    Ok(Lu::factor(a)?.solve(b))
}

/// Solves `Fᵀ P + P F + N = 0` for symmetric `P` through the Kronecker-product
/// linear system on the packed upper triangle of `P`.
pub fn solve_lyapunov(fbar: &DenseMatrix, n: &SymMatrix) -> Result<SymMatrix, NumError> {
    if !fbar.is_square() || fbar.rows() != n.dim() {
        return Err(NumError::Dimension(format!(
            "Lyapunov: F is {}x{}, N is {}x{}",
            fbar.rows(),
            fbar.cols(),
            n.dim(),
            n.dim()
        )));
    }
    let d = n.dim();
    // Unknowns: P_ij for i <= j. Equations: (i, j) entry, i <= j, of FᵀP + PF.
    let idx = |i: usize, j: usize| {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * d - i * (i + 1) / 2 + j
    };
    let k = d * (d + 1) / 2;
    let mut sys = DenseMatrix::zeros(k, k);
    let mut rhs = vec![0.0; k];
    for i in 0..d {
        for j in i..d {
            let row = idx(i, j);
            // (FᵀP)_ij = Σ_l F_li P_lj ; (PF)_ij = Σ_l P_il F_lj
            for l in 0..d {
                sys[(row, idx(l, j))] += fbar[(l, i)];
                sys[(row, idx(i, l))] += fbar[(l, j)];
            }
            rhs[row] = -n.get(i, j);
        }
    }
    let sol = match solve_linear(&sys, &rhs) {
        Ok(s) => s,
        Err(NumError::Singular { .. }) => return Err(NumError::NoUniqueSolution),
        Err(e) => return Err(e),
    };
    let mut p = SymMatrix::zeros(d);
    for i in 0..d {
        for j in i..d {
            p.set(i, j, sol[idx(i, j)]);
        }
    }
    Ok(p)
}

/// Coefficients `c_1..c_n` of the characteristic polynomial
/// `λⁿ + c_1 λⁿ⁻¹ + … + c_n` (Faddeev–LeVerrier).
pub fn char_poly(a: &DenseMatrix) -> Result<Vec<f64>, NumError> {
    if !a.is_square() {
        return Err(NumError::Dimension("characteristic polynomial of a non-square matrix".into()));
    }
    let n = a.rows();
    let mut coeffs = Vec::with_capacity(n);
    let mut m = DenseMatrix::zeros(n, n);
    let mut c_prev = 1.0;
    for k in 1..=n {
        // M_k = A M_{k-1} + c_{k-1} I
        let mut next = a.matmul(&m)?;
        for i in 0..n {
            next[(i, i)] += c_prev;
        }
        m = next;
        let am = a.matmul(&m)?;
        let tr: f64 = (0..n).map(|i| am[(i, i)]).sum();
        let c = -tr / k as f64;
        coeffs.push(c);
        c_prev = c;
    }
    Ok(coeffs)
}

/// Real parts of the eigenvalues of a general real matrix are all negative.
///
/// Decided with the Routh–Hurwitz table on the characteristic polynomial,
/// which avoids a general non-symmetric eigensolver.
pub fn is_hurwitz(a: &DenseMatrix) -> Result<bool, NumError> {
    let c = char_poly(a)?;
    let mut coeffs = vec![1.0];
    coeffs.extend(c);
    Ok(routh_hurwitz_stable(&coeffs))
}

fn routh_hurwitz_stable(coeffs: &[f64]) -> bool {
    // coeffs[0] λ^n + coeffs[1] λ^{n-1} + ...
    let n = coeffs.len() - 1;
    if coeffs.iter().any(|&c| c <= 0.0) {
        return false;
    }
    if n <= 1 {
        return true;
    }
    let width = n / 2 + 1;
    let mut prev: Vec<f64> = (0..width).map(|i| *coeffs.get(2 * i).unwrap_or(&0.0)).collect();
    let mut cur: Vec<f64> = (0..width).map(|i| *coeffs.get(2 * i + 1).unwrap_or(&0.0)).collect();
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    for _ in 0..n - 1 {
        if cur[0] <= 1e-14 * scale {
            return false;
        }
        let mut next = vec![0.0; width];
        for i in 0..width - 1 {
            next[i] = (cur[0] * prev[i + 1] - prev[0] * cur[i + 1]) / cur[0];
        }
        prev = cur;
        cur = next;
    }
    cur[0] > 0.0
}
