//! Self-contained dense linear algebra for symmetric problems.
//!
//! Everything here is sized for d up to a few hundred: a cyclic Jacobi
//! eigensolver, least-squares multiplier solves through the normal equations,
//! orthonormal tangent (null-space) bases, and spectral norms of symmetric
//! differences.

use crate::{Error, Result};

/// Off-diagonal Frobenius mass threshold for Jacobi convergence, relative to
/// the Frobenius norm of the input.
const JACOBI_TOL: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigenvalues of the constraint Gram matrix below `cutoff * lambda_max` are
/// treated as a LICQ violation rather than regularized away.
const PINV_CUTOFF: f64 = 1e-12;

// ---------------------------------------------------------------------------
// vector helpers

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// y += s * x
pub fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

pub fn normalized(a: &[f64]) -> Result<Vec<f64>> {
    let n = norm(a);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::NonFinite { context: "normalize" });
    }
    Ok(scale(a, 1.0 / n))
}

/// i-th standard basis vector of R^d.
pub fn unit(i: usize, d: usize) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[i] = 1.0;
    e
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

// ---------------------------------------------------------------------------
// SymMatrix

/// Symmetric d x d matrix. Only the lower triangle is stored, so the symmetry
/// invariant `a(i,j) == a(j,i)` holds exactly by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>, // packed lower triangle, row-major
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        SymMatrix {
            dim,
            data: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut a = Self::zeros(dim);
        for i in 0..dim {
            a.set(i, i, 1.0);
        }
        a
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let mut a = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            a.set(i, i, v);
        }
        a
    }

    /// Build from `f(i, j)` evaluated on the lower triangle (i >= j).
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut a = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..=i {
                a.set(i, j, f(i, j));
            }
        }
        a
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        r * (r + 1) / 2 + c
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// self += s * other
    pub fn add_scaled(&mut self, s: f64, other: &SymMatrix) {
        assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// self += s * v v^T
    pub fn add_scaled_outer(&mut self, s: f64, v: &[f64]) {
        assert_eq!(self.dim, v.len());
        for i in 0..self.dim {
            for j in 0..=i {
                let k = i * (i + 1) / 2 + j;
                self.data[k] += s * v[i] * v[j];
            }
        }
    }

    pub fn scaled(&self, s: f64) -> SymMatrix {
        SymMatrix {
            dim: self.dim,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn sub(&self, other: &SymMatrix) -> Result<SymMatrix> {
        if self.dim != other.dim {
            return Err(Error::DimMismatch { left: self.dim, right: other.dim });
        }
        Ok(SymMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn matvec(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(self.dim, w.len());
        let mut out = vec![0.0; self.dim];
        for i in 0..self.dim {
            let mut s = 0.0;
            for j in 0..self.dim {
                s += self.get(i, j) * w[j];
            }
            out[i] = s;
        }
        out
    }

    /// w^T A w
    pub fn quadratic_form(&self, w: &[f64]) -> f64 {
        dot(w, &self.matvec(w))
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..=i {
                let v = self.get(i, j);
                s += if i == j { v * v } else { 2.0 * v * v };
            }
        }
        s.sqrt()
    }

    fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j)).collect())
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Mat (general dense, row-major)

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_columns(rows: usize, cols: Vec<Vec<f64>>) -> Self {
        let ncols = cols.len();
        let mut m = Self::zeros(rows, ncols);
        for (j, c) in cols.iter().enumerate() {
            assert_eq!(c.len(), rows);
            for i in 0..rows {
                m.set(i, j, c[i]);
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// A x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len());
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    /// A^T x
    pub fn t_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len());
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j) * x[i]).sum())
            .collect()
    }

    /// B^T H B for symmetric H, returned as a SymMatrix of size cols x cols.
    pub fn conjugate_sym(&self, h: &SymMatrix) -> SymMatrix {
        assert_eq!(self.rows, h.dim());
        let hb: Vec<Vec<f64>> = (0..self.cols).map(|j| h.matvec(&self.col(j))).collect();
        SymMatrix::from_fn(self.cols, |i, j| dot(&self.col(i), &hb[j]))
    }
}

// ---------------------------------------------------------------------------
// eigendecomposition

/// Eigenvalues sorted descending with a column-orthonormal eigenbasis.
#[derive(Clone, Debug)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: Mat,
}

impl EigenPairs {
    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.vectors.col(k)
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Converges when the off-diagonal Frobenius mass drops below
/// `1e-14 * ||A||_F`; at most 100 sweeps. Eigenvalues are sorted descending
/// (ties keep the original diagonal order) and each eigenvector's sign is
/// fixed so its largest-magnitude component is positive.
pub fn sym_eig(a: &SymMatrix) -> Result<EigenPairs> {
    if !a.is_finite() {
        return Err(Error::NonFinite { context: "sym_eig input" });
    }
    let d = a.dim();
    if d == 0 {
        return Ok(EigenPairs { values: vec![], vectors: Mat::zeros(0, 0) });
    }
    let mut m = a.to_dense();
    let mut v = Mat::identity(d);
    let fro = a.frobenius_norm();
    let tol = JACOBI_TOL * fro.max(f64::MIN_POSITIVE);

    let off = |m: &Vec<Vec<f64>>| -> f64 {
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..i {
                s += 2.0 * m[i][j] * m[i][j];
            }
        }
        s.sqrt()
    };

    let mut converged = fro == 0.0 || off(&m) <= tol;
    let mut sweeps = 0;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        sweeps += 1;
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = m[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // rotate rows/columns p, q of m
                for k in 0..d {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                // accumulate eigenvectors
                for k in 0..d {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
        converged = off(&m) <= tol;
    }
    if !converged {
        return Err(Error::EigNonConvergence { sweeps, residual: off(&m) });
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| m[j][j].partial_cmp(&m[i][i]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| m[i][i]).collect();
    let mut vectors = Mat::zeros(d, d);
    for (new_j, &old_j) in order.iter().enumerate() {
        let mut col = v.col(old_j);
        // canonical sign: first largest-magnitude entry positive
        let mut arg = 0;
        for k in 1..d {
            if col[k].abs() > col[arg].abs() {
                arg = k;
            }
        }
        if col[arg] < 0.0 {
            for x in col.iter_mut() {
                *x = -*x;
            }
        }
        for k in 0..d {
            vectors.set(k, new_j, col[k]);
        }
    }
    Ok(EigenPairs { values, vectors })
}

fn check_full_rank(gram_eig: &EigenPairs) -> Result<()> {
    let lambda_max = gram_eig.values.first().copied().unwrap_or(0.0);
    let lambda_min = gram_eig.values.last().copied().unwrap_or(0.0);
    if lambda_max <= 0.0 || lambda_min < PINV_CUTOFF * lambda_max {
        return Err(Error::LicqViolation { min_eig: lambda_min });
    }
    Ok(())
}

/// Least-squares Lagrange multipliers: the minimizer `mu` of `||g + C mu||`,
/// i.e. `-pinv(C) g`, via the normal equations. Rank-deficient `C` signals a
/// LICQ violation.
pub fn least_squares_multipliers(c: &Mat, g: &[f64]) -> Result<Vec<f64>> {
    if c.n_rows() != g.len() {
        return Err(Error::DimMismatch { left: c.n_rows(), right: g.len() });
    }
    let m = c.n_cols();
    if m == 0 {
        return Ok(vec![]);
    }
    let gram = SymMatrix::from_fn(m, |i, j| dot(&c.col(i), &c.col(j)));
    let eig = sym_eig(&gram)?;
    check_full_rank(&eig)?;
    let rhs: Vec<f64> = c.t_matvec(g).iter().map(|x| -x).collect();
    // gram^{-1} rhs through the eigenbasis
    let coeffs = eig.vectors.t_matvec(&rhs);
    let scaled: Vec<f64> = coeffs.iter().zip(&eig.values).map(|(x, l)| x / l).collect();
    Ok(eig.vectors.matvec(&scaled))
}

/// Orthonormal basis of the tangent space `{v : v^T c_j = 0 for all columns}`.
///
/// Columns of `C` must be linearly independent (LICQ). For `m = 0` this is the
/// identity basis.
pub fn tangent_basis(c: &Mat) -> Result<Mat> {
    let d = c.n_rows();
    let m = c.n_cols();
    if m == 0 {
        return Ok(Mat::identity(d));
    }
    let gram = SymMatrix::from_fn(m, |i, j| dot(&c.col(i), &c.col(j)));
    check_full_rank(&sym_eig(&gram)?)?;

    // orthonormalize the constraint gradients (two MGS passes)
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(m);
    for j in 0..m {
        let mut v = c.col(j);
        for _ in 0..2 {
            for u in &q {
                let p = dot(&v, u);
                axpy(&mut v, -p, u);
            }
        }
        let n = norm(&v);
        if n < 1e-12 {
            return Err(Error::LicqViolation { min_eig: n });
        }
        q.push(scale(&v, 1.0 / n));
    }

    // complete to an orthonormal basis of R^d with coordinate vectors
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d - m);
    for i in 0..d {
        if basis.len() == d - m {
            break;
        }
        let mut v = unit(i, d);
        for _ in 0..2 {
            for u in q.iter().chain(basis.iter()) {
                let p = dot(&v, u);
                axpy(&mut v, -p, u);
            }
        }
        let n = norm(&v);
        if n > 1e-8 {
            basis.push(scale(&v, 1.0 / n));
        }
    }
    if basis.len() != d - m {
        return Err(Error::LicqViolation { min_eig: 0.0 });
    }
    Ok(Mat::from_columns(d, basis))
}

/// Spectral norm of A: max |eigenvalue|.
pub fn operator_norm(a: &SymMatrix) -> Result<f64> {
    let eig = sym_eig(a)?;
    Ok(eig.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs())))
}

/// Spectral norm of the symmetric difference A - B.
pub fn operator_norm_diff(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    operator_norm(&a.sub(b)?)
}

/// Minimum eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &SymMatrix) -> Result<f64> {
    let eig = sym_eig(a)?;
    Ok(*eig.values.last().expect("nonempty spectrum"))
}

/// A Haar-ish random orthonormal matrix: the eigenbasis of a random Gaussian
/// symmetric matrix (good enough for generating test instances).
pub fn random_orthonormal<R: rand::Rng>(d: usize, rng: &mut R) -> Result<Mat> {
    let mut a = SymMatrix::zeros(d);
    for i in 0..d {
        for j in 0..=i {
            let g: f64 = rng.sample(rand_distr::StandardNormal);
            a.set(i, j, g);
        }
    }
    let eig = sym_eig(&a)?;
    Ok(eig.vectors)
}

/// A uniformly random unit vector.
pub fn random_unit<R: rand::Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        if let Ok(u) = normalized(&v) {
            return u;
        }
    }
}
