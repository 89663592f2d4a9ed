//! Dense linear algebra shared by the subspace and sparse recognizers.
//!
//! Everything here works on small-to-medium dense matrices (at most a few
//! hundred columns, possibly tens of thousands of rows), stored row-major.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Ridge used wherever a caller does not supply one.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("matrix entries must be finite"));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input; meant for
    /// literals in tests and small fixtures.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    /// Builds a `d × n` matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[&[f64]]) -> Result<Self> {
        let n = columns.len();
        let d = columns.first().map_or(0, |c| c.len());
        let mut m = Self::zeros(d, n);
        for (j, col) in columns.iter().enumerate() {
            if col.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: col.len(),
                });
            }
            for (i, &v) in col.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), self.rows);
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    /// Keeps only the listed columns, in the listed order.
    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.rows, cols.len());
        for i in 0..self.rows {
            let src = self.row(i);
            let dst = &mut out.data[i * cols.len()..(i + 1) * cols.len()];
            for (d, &j) in dst.iter_mut().zip(cols) {
                *d = src[j];
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `A·x`
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: x.len(),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `Aᵀ·y`
    pub fn tr_matvec(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                actual: y.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * yi;
            }
        }
        Ok(out)
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Index of the largest value; ties go to the lowest index. NaN never wins.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if !(v > values[b]) => {}
            _ if v.is_nan() => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Column `i` is the unit eigenvector for `eigenvalues[i]`.
    pub eigenvectors: Matrix,
}

impl EigenDecomposition {
    pub fn eigenvector(&self, i: usize) -> Vec<f64> {
        self.eigenvectors.column(i)
    }
}

/// Full eigendecomposition of a symmetric matrix.
///
/// Householder reduction to tridiagonal form followed by implicitly shifted
/// QL sweeps (the bottom-up mirror of the implicit QR step). The total number
/// of sweeps is capped at `30·n`.
pub fn sym_eigen(a: &Matrix) -> Result<EigenDecomposition> {
    let n = a.rows();
    if n != a.cols() {
        return Err(Error::invalid(format!(
            "sym_eigen needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if n == 0 {
        return Ok(EigenDecomposition {
            eigenvalues: vec![],
            eigenvectors: Matrix::zeros(0, 0),
        });
    }
    let scale = a.norm_inf();
    let mut deviation = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            deviation = deviation.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if deviation > 1e-8 * scale {
        return Err(Error::NotSymmetric { deviation });
    }

    // Work on the symmetrized copy so tiny asymmetries cannot bias the result.
    let mut v = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            v[i][j] = 0.5 * (a[(i, j)] + a[(j, i)]);
        }
    }
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(&mut v, &mut d, &mut e);
    tridiagonal_ql(&mut v, &mut d, &mut e, 30 * n)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| d[y].total_cmp(&d[x]).then(x.cmp(&y)));
    let mut vectors = Matrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (col, &src) in order.iter().enumerate() {
        values.push(d[src]);
        for (row, vr) in v.iter().enumerate() {
            vectors[(row, col)] = vr[src];
        }
    }
    Ok(EigenDecomposition {
        eigenvalues: values,
        eigenvectors: vectors,
    })
}

// Householder tridiagonalization. On exit `v` holds the accumulated
// orthogonal transform, `d` the diagonal and `e[1..]` the sub-diagonal.
fn tridiagonalize(v: &mut [Vec<f64>], d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    d.copy_from_slice(&v[n - 1]);
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[i - 1][j];
                v[i][j] = 0.0;
                v[j][i] = 0.0;
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[j][i] = f;
                g = e[j] + v[j][j] * f;
                for k in (j + 1)..i {
                    g += v[k][j] * d[k];
                    e[k] += v[k][j] * f;
                }
                e[j] = g;
            }
            f = 0.0;
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
                    v[k][j] -= f * e[k] + g * d[k];
                }
                d[j] = v[i - 1][j];
                v[i][j] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..n - 1 {
        v[n - 1][i] = v[i][i];
        v[i][i] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[k][i + 1] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[k][i + 1] * v[k][j];
                }
                for k in 0..=i {
                    v[k][j] -= g * d[k];
                }
            }
        }
        for row in v.iter_mut().take(i + 1) {
            row[i + 1] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[n - 1][j];
        v[n - 1][j] = 0.0;
    }
    v[n - 1][n - 1] = 1.0;
    e[0] = 0.0;
}

fn tridiagonal_ql(
    v: &mut [Vec<f64>],
    d: &mut [f64],
    e: &mut [f64],
    max_sweeps: usize,
) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    let eps = f64::EPSILON;
    let mut sweeps = 0usize;
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
            loop {
                sweeps += 1;
                if sweeps > max_sweeps {
                    return Err(Error::NoConvergence { iterations: sweeps });
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
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
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
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
                    for row in v.iter_mut() {
                        h = row[i + 1];
                        row[i + 1] = s * row[i] + c * h;
                        row[i] = c * row[i] - s * h;
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
        e[l] = 0.0;
    }
    Ok(())
}

/// `XᵀX` for a `d × n` matrix.
pub fn gram_matrix(x: &Matrix) -> Matrix {
    let n = x.cols();
    let mut g = Matrix::zeros(n, n);
    for i in 0..x.rows() {
        let row = x.row(i);
        for (a, &ra) in row.iter().enumerate() {
            if ra == 0.0 {
                continue;
            }
            let g_row = &mut g.data[a * n..(a + 1) * n];
            for (b, &rb) in row.iter().enumerate().skip(a) {
                g_row[b] += ra * rb;
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            g[(a, b)] = g[(b, a)];
        }
    }
    g
}

/// Factorization of the ridge-augmented system `[X; √λ·I]` by Householder QR,
/// reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct RidgeSolver {
    d: usize,
    n: usize,
    sqrt_ridge: f64,
    // Householder vectors; reflector k acts on rows k.. of the augmented
    // system and is stored with its leading entry at index 0.
    reflectors: Vec<Vec<f64>>,
    betas: Vec<f64>,
    r: Matrix,
}

impl RidgeSolver {
    pub fn new(x: &Matrix, ridge: f64) -> Result<Self> {
        if !(ridge >= 0.0) || !ridge.is_finite() {
            return Err(Error::invalid(format!("ridge must be >= 0, got {ridge}")));
        }
        let (d, n) = (x.rows(), x.cols());
        if d == 0 || n == 0 {
            return Err(Error::invalid("least squares needs d >= 1 and n >= 1"));
        }
        let sqrt_ridge = ridge.sqrt();
        let m = d + n;
        // Column-major working copy of the augmented matrix.
        let mut cols: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                let mut c = vec![0.0; m];
                for i in 0..d {
                    c[i] = x[(i, j)];
                }
                c[d + j] = sqrt_ridge;
                c
            })
            .collect();

        let mut reflectors = Vec::with_capacity(n);
        let mut betas = Vec::with_capacity(n);
        let mut r = Matrix::zeros(n, n);
        for k in 0..n {
            let col = &cols[k][k..];
            let alpha = norm2(col);
            let mut vk = col.to_vec();
            let beta;
            if alpha == 0.0 {
                beta = 0.0;
            } else {
                let sign = if vk[0] >= 0.0 { 1.0 } else { -1.0 };
                vk[0] += sign * alpha;
                let vnorm2 = dot(&vk, &vk);
                beta = 2.0 / vnorm2;
            }
            for col in cols.iter_mut().skip(k) {
                let tail = &mut col[k..];
                let s = beta * dot(&vk, tail);
                if s != 0.0 {
                    for (t, &vi) in tail.iter_mut().zip(&vk) {
                        *t -= s * vi;
                    }
                }
            }
            for j in k..n {
                r[(k, j)] = cols[j][k];
            }
            reflectors.push(vk);
            betas.push(beta);
        }

        let diag_max = (0..n).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
        let diag_min = (0..n).map(|i| r[(i, i)].abs()).fold(f64::INFINITY, f64::min);
        if diag_max == 0.0 || diag_min <= 1e-10 * diag_max {
            return Err(Error::RankDeficient);
        }
        Ok(Self {
            d,
            n,
            sqrt_ridge,
            reflectors,
            betas,
            r,
        })
    }

    pub fn ridge(&self) -> f64 {
        self.sqrt_ridge * self.sqrt_ridge
    }

    /// Minimizer of `‖Xa − y‖² + λ‖a‖²`.
    pub fn solve(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                actual: y.len(),
            });
        }
        let mut rhs = vec![0.0; self.d + self.n];
        rhs[..self.d].copy_from_slice(y);
        for (k, (vk, &beta)) in self.reflectors.iter().zip(&self.betas).enumerate() {
            let tail = &mut rhs[k..];
            let s = beta * dot(vk, tail);
            if s != 0.0 {
                for (t, &vi) in tail.iter_mut().zip(vk) {
                    *t -= s * vi;
                }
            }
        }
        let mut a = vec![0.0; self.n];
        for i in (0..self.n).rev() {
            let mut acc = rhs[i];
            for j in (i + 1)..self.n {
                acc -= self.r[(i, j)] * a[j];
            }
            a[i] = acc / self.r[(i, i)];
        }
        Ok(a)
    }
}

/// One-shot ridge least squares; see [`RidgeSolver`].
pub fn solve_least_squares(x: &Matrix, y: &[f64], ridge: f64) -> Result<Vec<f64>> {
    RidgeSolver::new(x, ridge)?.solve(y)
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub(crate) fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut s = a[(j, j)];
        for k in 0..j {
            s -= l[(j, k)] * l[(j, k)];
        }
        if s <= 0.0 || !s.is_finite() {
            return Err(Error::invalid("matrix is not positive definite"));
        }
        let ljj = s.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `L·X = B` for lower-triangular `L`, column by column.
pub(crate) fn solve_lower(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.rows();
    let mut x = b.clone();
    for c in 0..b.cols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// Solves `Lᵀ·X = B` for lower-triangular `L`.
pub(crate) fn solve_lower_transposed(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.rows();
    let mut x = b.clone();
    for c in 0..b.cols() {
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}
