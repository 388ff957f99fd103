//! Dense linear algebra used by PCA and the pseudo-inverse memory vector.
//!
//! The symmetric eigensolver is Householder tridiagonalization followed by
//! implicit QL iterations; the SVD is one-sided (Hestenes) Jacobi, which
//! is accurate for the tall, skinny descriptor matrices that show up in
//! query expansion.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(rows * cols, data.len()));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Stacks equal-length vectors as rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim(cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Places equal-length vectors side by side as columns.
    pub fn from_columns<C: AsRef<[T]>>(columns: &[C]) -> Result<Self> {
        Ok(Self::from_rows(columns)?.transpose())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
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

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::dim(self.cols, other.rows));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.cols {
            return Err(Error::dim(self.cols, v.len()));
        }
        Ok(self
            .row_iter()
            .map(|r| r.iter().zip(v).fold(T::zero(), |acc, (&a, &b)| acc + a * b))
            .collect())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dim(self.rows * self.cols, other.rows * other.cols));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn frobenius_norm(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &x| acc + x * x)
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Eigen-decomposition of a real symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymmetricEigen<T> {
    /// Eigenvalues in descending order.
    pub values: Vec<T>,
    /// Row `i` is the unit eigenvector for `values[i]`.
    pub vectors: Matrix<T>,
}

/// Decomposes a symmetric matrix. Only the lower triangle is read.
pub fn symmetric_eigen<T: Scalar>(a: &Matrix<T>) -> Result<SymmetricEigen<T>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::dim(n, a.cols()));
    }
    if !a.is_finite() {
        return Err(Error::Data("non-finite matrix entry".into()));
    }
    if n == 0 {
        return Ok(SymmetricEigen {
            values: Vec::new(),
            vectors: Matrix::zeros(0, 0),
        });
    }
    let mut v = a.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            v[(i, j)] = v[(j, i)];
        }
    }
    let mut d = vec![T::zero(); n];
    let mut e = vec![T::zero(); n];
    tridiagonalize(&mut v, &mut d, &mut e);
    tridiagonal_ql(&mut v, &mut d, &mut e)?;

    // columns of v are eigenvectors; emit them as rows, largest first
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].partial_cmp(&d[i]).unwrap().then(i.cmp(&j)));
    let mut vectors = Matrix::zeros(n, n);
    for (r, &c) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(r, k)] = v[(k, c)];
        }
    }
    Ok(SymmetricEigen {
        values: order.iter().map(|&c| d[c]).collect(),
        vectors,
    })
}

/// Householder reduction to tridiagonal form, accumulating the
/// transformation in `v`. On exit `d` holds the diagonal and `e[1..]` the
/// subdiagonal.
fn tridiagonalize<T: Scalar>(v: &mut Matrix<T>, d: &mut [T], e: &mut [T]) {
    let n = d.len();
    let zero = T::zero();
    for j in 0..n {
        d[j] = v[(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = zero;
        let mut h = zero;
        for dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == zero {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1, j)];
                v[(i, j)] = zero;
                v[(j, i)] = zero;
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > zero {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = zero;
            }
            for j in 0..i {
                f = d[j];
                v[(j, i)] = f;
                g = e[j] + v[(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[(k, j)] * d[k];
                    e[k] += v[(k, j)] * f;
                }
                e[j] = g;
            }
            f = zero;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    let upd = f * e[k] + g * d[k];
                    v[(k, j)] -= upd;
                }
                d[j] = v[(i - 1, j)];
                v[(i, j)] = zero;
            }
        }
        d[i] = h;
    }

    for i in 0..n - 1 {
        v[(n - 1, i)] = v[(i, i)];
        v[(i, i)] = T::one();
        let h = d[i + 1];
        if h != zero {
            for k in 0..=i {
                d[k] = v[(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = zero;
                for k in 0..=i {
                    g += v[(k, i + 1)] * v[(k, j)];
                }
                for k in 0..=i {
                    let upd = g * d[k];
                    v[(k, j)] -= upd;
                }
            }
        }
        for k in 0..=i {
            v[(k, i + 1)] = zero;
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1, j)];
        v[(n - 1, j)] = zero;
    }
    v[(n - 1, n - 1)] = T::one();
    e[0] = zero;
}

/// Implicit QL on the tridiagonal matrix (d, e), rotating `v` along.
fn tridiagonal_ql<T: Scalar>(v: &mut Matrix<T>, d: &mut [T], e: &mut [T]) -> Result<()> {
    const MAX_SWEEPS: usize = 100;
    let n = d.len();
    let zero = T::zero();
    let one = T::one();
    let two = one + one;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = zero;

    let mut f = zero;
    let mut tst1 = zero;
    let eps = T::epsilon();
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > MAX_SWEEPS {
                    return Err(Error::Data("eigensolver failed to converge".into()));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (two * e[l]);
                let mut r = p.hypot(one);
                if p < zero {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = one;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = zero;
                let mut s2 = zero;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        let vk1 = v[(k, i + 1)];
                        let vk = v[(k, i)];
                        v[(k, i + 1)] = s * vk + c * vk1;
                        v[(k, i)] = c * vk - s * vk1;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = zero;
    }
    Ok(())
}

/// Thin singular value decomposition `A = U · diag(s) · Vᵀ`.
#[derive(Clone, Debug)]
pub struct Svd<T> {
    /// rows(A) × r, orthonormal columns where `s > 0`.
    pub u: Matrix<T>,
    /// Singular values, descending, length r = min(rows, cols).
    pub s: Vec<T>,
    /// cols(A) × r, orthonormal columns.
    pub v: Matrix<T>,
}

/// One-sided Jacobi SVD.
pub fn svd<T: Scalar>(a: &Matrix<T>) -> Result<Svd<T>> {
    if !a.is_finite() {
        return Err(Error::Data("non-finite matrix entry".into()));
    }
    if a.rows() >= a.cols() {
        jacobi_svd_tall(a)
    } else {
        let t = jacobi_svd_tall(&a.transpose())?;
        Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        })
    }
}

fn jacobi_svd_tall<T: Scalar>(a: &Matrix<T>) -> Result<Svd<T>> {
    const MAX_SWEEPS: usize = 80;
    let (m, n) = (a.rows(), a.cols());
    // rotations run in f64 whatever T is; the stopping threshold accounts
    // for rounding in length-m inner products
    let tol = (m as f64).sqrt() * f64::EPSILON;

    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..m).map(|i| a[(i, j)].as_f64()).collect())
        .collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut c = vec![0.0; n];
            c[j] = 1.0;
            c
        })
        .collect();

    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for (&x, &y) in cp.iter().zip(cq) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    (alpha, beta, gamma)
                };
                if alpha == 0.0 || beta == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut cols, p, q, c, s);
                rotate_pair(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Data("SVD failed to converge".into()));
    }

    let mut sv: Vec<(f64, usize)> = cols
        .iter()
        .enumerate()
        .map(|(j, c)| (c.iter().map(|x| x * x).sum::<f64>().sqrt(), j))
        .collect();
    sv.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut u = Matrix::zeros(m, n);
    let mut v = Matrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (r, &(sigma, j)) in sv.iter().enumerate() {
        s.push(T::of(sigma));
        if sigma > 0.0 {
            for i in 0..m {
                u[(i, r)] = T::of(cols[j][i] / sigma);
            }
        }
        for i in 0..n {
            v[(i, r)] = T::of(vcols[j][i]);
        }
    }
    Ok(Svd { u, s, v })
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let cp = &mut left[p];
    let cq = &mut right[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Default relative cutoff for small singular values: `max(rows, cols)·ε`.
pub fn default_pinv_tolerance<T: Scalar>(rows: usize, cols: usize) -> T {
    T::of(rows.max(cols) as f64) * T::epsilon()
}

/// Moore–Penrose pseudo-inverse of a `rows × cols` matrix (result is
/// `cols × rows`). Singular values `≤ tol·σ_max` are treated as zero;
/// `None` selects [`default_pinv_tolerance`].
pub fn pseudo_inverse<T: Scalar>(a: &Matrix<T>, tol: Option<T>) -> Result<Matrix<T>> {
    let (rows, cols) = (a.rows(), a.cols());
    if let Some(t) = tol {
        if !(t >= T::zero() && t.is_finite()) {
            return Err(Error::Data(format!("invalid tolerance {t}")));
        }
    }
    let tol = tol.unwrap_or_else(|| default_pinv_tolerance(rows, cols));
    let dec = svd(a)?;
    let mut out = Matrix::zeros(cols, rows);
    let sigma_max = dec.s.first().copied().unwrap_or(T::zero());
    if sigma_max == T::zero() {
        return Ok(out);
    }
    let cutoff = tol * sigma_max;
    for (r, &sigma) in dec.s.iter().enumerate() {
        if sigma <= cutoff {
            continue;
        }
        let inv = T::one() / sigma;
        for i in 0..cols {
            let vi = dec.v[(i, r)] * inv;
            if vi == T::zero() {
                continue;
            }
            let out_row = out.row_mut(i);
            for (j, o) in out_row.iter_mut().enumerate() {
                *o += vi * dec.u[(j, r)];
            }
        }
    }
    Ok(out)
}
