//! Dense row-major matrices and vectors in 64-bit floats, plus the few
//! factorizations the solvers need.

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dim(format!(
                "matrix data length {} != {rows}x{cols}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Arg("matrix entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
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

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// y = A x
    pub fn matvec(&self, x: &DenseVector) -> Result<DenseVector> {
        if x.len() != self.cols {
            return Err(Error::Dim(format!(
                "matvec: {}x{} with vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = self.row(i);
            let mut acc = 0.0;
            for j in 0..self.cols {
                acc += row[j] * x.data[j];
            }
            y[i] = acc;
        }
        Ok(DenseVector::new(y))
    }

    /// y = Aᵀ x
    pub fn matvec_t(&self, x: &DenseVector) -> Result<DenseVector> {
        if x.len() != self.rows {
            return Err(Error::Dim(format!(
                "matvec_t: {}x{} with vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.cols];
        for i in 0..self.rows {
            let row = self.row(i);
            let xi = x.data[i];
            for j in 0..self.cols {
                y[j] += row[j] * xi;
            }
        }
        Ok(DenseVector::new(y))
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// C = A B
    pub fn matmul(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != b.rows {
            return Err(Error::Dim(format!(
                "matmul: {}x{} by {}x{}",
                self.rows, self.cols, b.rows, b.cols
            )));
        }
        let mut c = DenseMatrix::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self.get(i, k);
                if aik == 0.0 {
                    continue;
                }
                let brow = b.row(k);
                let crow = &mut c.data[i * b.cols..(i + 1) * b.cols];
                for j in 0..b.cols {
                    crow[j] += aik * brow[j];
                }
            }
        }
        Ok(c)
    }

    /// A Aᵀ (rows x rows), symmetric.
    pub fn gram_rows(&self) -> DenseMatrix {
        let m = self.rows;
        let mut g = DenseMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let mut acc = 0.0;
                let (ri, rj) = (self.row(i), self.row(j));
                for k in 0..self.cols {
                    acc += ri[k] * rj[k];
                }
                g.set(i, j, acc);
                g.set(j, i, acc);
            }
        }
        g
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Dense vector of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector {
    pub data: Vec<f64>,
}

impl DenseVector {
    pub fn new(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn zeros(n: usize) -> Self {
        Self { data: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dot(&self, other: &DenseVector) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm2_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm2(&self) -> f64 {
        self.norm2_sq().sqrt()
    }

    pub fn norm1(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn add(&self, other: &DenseVector) -> DenseVector {
        DenseVector::new(
            self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        )
    }

    pub fn sub(&self, other: &DenseVector) -> DenseVector {
        DenseVector::new(
            self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        )
    }

    pub fn scale(&self, s: f64) -> DenseVector {
        DenseVector::new(self.data.iter().map(|v| s * v).collect())
    }

    /// a*self + b*other
    pub fn lincomb(&self, a: f64, other: &DenseVector, b: f64) -> DenseVector {
        DenseVector::new(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        )
    }

    /// Indices of nonzero entries, ascending.
    pub fn nonzero_indices(&self) -> Vec<usize> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Sorted set of support indices over [0, N).
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    indices: Vec<usize>,
}

impl SupportSet {
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self { indices }
    }

    pub fn from_vector(x: &DenseVector) -> Self {
        Self { indices: x.nonzero_indices() }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    /// True when every nonzero of `x` lies inside this set.
    pub fn contains_support_of(&self, x: &DenseVector) -> bool {
        x.data
            .iter()
            .enumerate()
            .all(|(i, v)| *v == 0.0 || self.contains(i))
    }
}

/// Largest eigenvalue of AᵀA by power iteration on the Gram operator,
/// i.e. the squared spectral norm of A.
///
/// Stops when the relative Rayleigh-quotient change drops below `tol`; a
/// run that exhausts `max_iter` returns a diagnostic error carrying the
/// last estimate.
pub fn spectral_norm_sq(a: &DenseMatrix, tol: f64, max_iter: usize) -> Result<f64> {
    if a.data.iter().all(|v| *v == 0.0) {
        return Err(Error::Arg("spectral_norm_sq: zero matrix".into()));
    }
    // Deterministic start vector seeded from the matrix itself.
    let mut v = DenseVector::new(
        (0..a.cols)
            .map(|j| 1.0 + 0.5 * ((j % 7) as f64) / 7.0)
            .collect(),
    );
    let nv = v.norm2();
    v = v.scale(1.0 / nv);
    let mut prev = 0.0f64;
    for it in 0..max_iter {
        let av = a.matvec(&v)?;
        let atav = a.matvec_t(&av)?;
        let lambda = v.dot(&atav);
        let n = atav.norm2();
        if n == 0.0 {
            // v landed in the null space; perturb deterministically.
            let mut d = v.data.clone();
            let slot = it % d.len();
            d[slot] += 1.0;
            v = DenseVector::new(d);
            let nv = v.norm2();
            v = v.scale(1.0 / nv);
            continue;
        }
        v = atav.scale(1.0 / n);
        if it > 0 && (lambda - prev).abs() <= tol * lambda.abs().max(1e-300) {
            return Ok(lambda);
        }
        prev = lambda;
    }
    Err(Error::Numeric(format!(
        "spectral_norm_sq: no convergence in {max_iter} iterations (last estimate {prev})"
    )))
}

/// Cholesky factorization of a symmetric positive-definite matrix.
/// Returns the lower factor L with A = L Lᵀ.
pub fn cholesky(a: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows != a.cols {
        return Err(Error::Dim("cholesky: matrix not square".into()));
    }
    let n = a.rows;
    let mut l = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Numeric(format!(
                        "cholesky: pivot {i} not positive ({s:.3e})"
                    )));
                }
                l.set(i, j, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Ok(l)
}

/// Solve A x = b given the Cholesky factor L of A.
pub fn cholesky_solve(l: &DenseMatrix, b: &DenseVector) -> DenseVector {
    let n = l.rows;
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b.data[i];
        for k in 0..i {
            s -= l.get(i, k) * y[k];
        }
        y[i] = s / l.get(i, i);
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l.get(k, i) * x[k];
        }
        x[i] = s / l.get(i, i);
    }
    DenseVector::new(x)
}

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
/// Returns (eigenvalues, eigenvectors as columns), eigenvalues descending.
pub fn jacobi_eigh(a: &DenseMatrix, sweeps: usize) -> Result<(Vec<f64>, DenseMatrix)> {
    if a.rows != a.cols {
        return Err(Error::Dim("jacobi_eigh: matrix not square".into()));
    }
    let n = a.rows;
    let mut m = a.clone();
    let mut v = DenseMatrix::identity(n);
    for _ in 0..sweeps {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m.get(p, q).abs();
            }
        }
        if off < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut pairs: Vec<(f64, usize)> =
        (0..n).map(|i| (m.get(i, i), i)).collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let vals: Vec<f64> = pairs.iter().map(|(w, _)| *w).collect();
    let mut vecs = DenseMatrix::zeros(n, n);
    for (new_j, (_, old_j)) in pairs.iter().enumerate() {
        for i in 0..n {
            vecs.set(i, new_j, v.get(i, *old_j));
        }
    }
    Ok((vals, vecs))
}

/// Thin SVD of an M x N matrix with M <= N, via Jacobi on A Aᵀ.
/// Returns (U: MxM, sigma: descending, Vt: MxN) with A = U diag(sigma) Vt.
pub fn svd_wide(a: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>, DenseMatrix)> {
    if a.rows > a.cols {
        return Err(Error::Dim("svd_wide expects rows <= cols".into()));
    }
    let g = a.gram_rows();
    let (vals, u) = jacobi_eigh(&g, 60)?;
    let sigma: Vec<f64> = vals.iter().map(|w| w.max(0.0).sqrt()).collect();
    // Vtᵀ rows: v_i = Aᵀ u_i / sigma_i
    let m = a.rows;
    let n = a.cols;
    let mut vt = DenseMatrix::zeros(m, n);
    for i in 0..m {
        let ui = DenseVector::new(u.col(i));
        let avi = a.matvec_t(&ui)?;
        let s = sigma[i];
        if s > 1e-300 {
            for j in 0..n {
                vt.set(i, j, avi.data[j] / s);
            }
        }
    }
    Ok((u, sigma, vt))
}
