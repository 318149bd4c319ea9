//! Dense complex matrices for the small dimensions (2, 4, 8) that appear in
//! single- and two-qubit channel work.
//!
//! Storage is row-major. Nothing here tries to be fast beyond avoiding
//! allocation in inner loops; the estimator has its own specialised kernel
//! for the hot path.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Default numerical tolerance for the routines in this module.
pub const DEFAULT_TOL: f64 = 1e-10;

const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);

/// Row-major dense complex matrix.
#[derive(Clone, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat {
            rows,
            cols,
            data: vec![C0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C1;
        }
        m
    }

    /// Builds a matrix from row-major entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(CMat { rows, cols, data })
    }

    /// Builds a matrix from nested rows.
    ///
    /// # Panics
    ///
    /// Panics if the rows are ragged. Intended for literals.
    pub fn from_rows<R: AsRef<[Complex64]>>(rows: &[R]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), ncols, "ragged rows");
            data.extend_from_slice(r);
        }
        CMat {
            rows: nrows,
            cols: ncols,
            data,
        }
    }

    /// Builds a matrix from nested rows of real numbers.
    pub fn from_real_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let complex: Vec<Vec<Complex64>> = rows
            .iter()
            .map(|r| r.as_ref().iter().map(|&x| Complex64::new(x, 0.0)).collect())
            .collect();
        CMat::from_rows(&complex)
    }

    /// Column vector.
    pub fn column(entries: &[Complex64]) -> Self {
        CMat {
            rows: entries.len(),
            cols: 1,
            data: entries.to_vec(),
        }
    }

    pub fn diag(entries: &[Complex64]) -> Self {
        let mut m = CMat::zeros(entries.len(), entries.len());
        for (i, &e) in entries.iter().enumerate() {
            m[(i, i)] = e;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<Complex64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> CMat {
        let mut out = CMat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn transpose(&self) -> CMat {
        let mut out = CMat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn conj(&self) -> CMat {
        self.map(|z| z.conj())
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> CMat {
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn scale(&self, s: Complex64) -> CMat {
        self.map(|z| z * s)
    }

    pub fn scale_re(&self, s: f64) -> CMat {
        self.map(|z| z * s)
    }

    /// Sum of diagonal entries.
    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn matmul(&self, rhs: &CMat) -> Result<CMat> {
        if self.cols != rhs.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = CMat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == C0 {
                    continue;
                }
                let rrow = rhs.row(k);
                let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in orow.iter_mut().zip(rrow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    fn zip_with(&self, rhs: &CMat, f: impl Fn(Complex64, Complex64) -> Complex64) -> Result<CMat> {
        if self.dims() != rhs.dims() {
            return Err(Error::Dimension(format!(
                "shape {:?} does not match {:?}",
                self.dims(),
                rhs.dims()
            )));
        }
        Ok(CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn try_add(&self, rhs: &CMat) -> Result<CMat> {
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn try_sub(&self, rhs: &CMat) -> Result<CMat> {
        self.zip_with(rhs, |a, b| a - b)
    }

    /// Elementwise comparison with an absolute tolerance.
    pub fn approx_eq(&self, other: &CMat, tol: f64) -> bool {
        self.dims() == other.dims() && self.data.iter().zip(&other.data).all(|(a, b)| (a - b).norm() <= tol)
    }

    /// Largest elementwise deviation; infinite when the shapes differ.
    pub fn max_deviation(&self, other: &CMat) -> f64 {
        if self.dims() != other.dims() {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Largest deviation from Hermiticity, `max |m_ij - conj(m_ji)|`.
    pub fn hermiticity_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in i..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }
}

impl Index<(usize, usize)> for CMat {
    type Output = Complex64;

    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

// The operator impls panic on shape mismatch, like the arithmetic operators
// of most matrix crates. Use the `try_*`/`matmul` forms for fallible code.

impl Mul for &CMat {
    type Output = CMat;

    fn mul(self, rhs: &CMat) -> CMat {
        self.matmul(rhs).expect("matrix product shape mismatch")
    }
}

impl Add for &CMat {
    type Output = CMat;

    fn add(self, rhs: &CMat) -> CMat {
        self.try_add(rhs).expect("matrix sum shape mismatch")
    }
}

impl Sub for &CMat {
    type Output = CMat;

    fn sub(self, rhs: &CMat) -> CMat {
        self.try_sub(rhs).expect("matrix difference shape mismatch")
    }
}

impl fmt::Debug for CMat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for z in self.row(i) {
                write!(f, "{:>10.6}{:+.6}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// Kronecker product. Row `(i_a, i_b)` of the result is `i_a * b.rows + i_b`,
/// i.e. lexicographic ordering with `a` as the most significant factor.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let rows = a.rows * b.rows;
    let cols = a.cols * b.cols;
    let mut out = CMat::zeros(rows, cols);
    for ia in 0..a.rows {
        for ja in 0..a.cols {
            let x = a[(ia, ja)];
            if x == C0 {
                continue;
            }
            for ib in 0..b.rows {
                for jb in 0..b.cols {
                    out[(ia * b.rows + ib, ja * b.cols + jb)] = x * b[(ib, jb)];
                }
            }
        }
    }
    out
}

/// Kronecker product of a sequence of factors, left to right.
pub fn kron_all<'a>(factors: impl IntoIterator<Item = &'a CMat>) -> CMat {
    factors.into_iter().fold(CMat::identity(1), |acc, f| kron(&acc, f))
}

/// Traces out every subsystem whose index is not in `keep`.
///
/// `dims` lists the subsystem dimensions, most significant first. The kept
/// subsystems stay in their original relative order.
pub fn partial_trace(m: &CMat, dims: &[usize], keep: &[usize]) -> Result<CMat> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "partial trace of a non-square {}x{} matrix",
            m.rows, m.cols
        )));
    }
    let total: usize = dims.iter().product();
    if total != m.rows {
        return Err(Error::Dimension(format!(
            "subsystem dims {dims:?} multiply to {total}, matrix has {} rows",
            m.rows
        )));
    }
    if let Some(&bad) = keep.iter().find(|&&k| k >= dims.len()) {
        return Err(Error::Dimension(format!(
            "subsystem {bad} out of range for {} subsystems",
            dims.len()
        )));
    }

    let kept: Vec<bool> = (0..dims.len()).map(|i| keep.contains(&i)).collect();
    let out_dim: usize = dims.iter().zip(&kept).filter(|(_, &k)| k).map(|(d, _)| d).product();

    // Split a flat index into (kept-part index, traced-part index).
    let split = |mut idx: usize| -> (usize, usize) {
        let mut digits = vec![0; dims.len()];
        for s in (0..dims.len()).rev() {
            digits[s] = idx % dims[s];
            idx /= dims[s];
        }
        let (mut k, mut t) = (0, 0);
        for s in 0..dims.len() {
            if kept[s] {
                k = k * dims[s] + digits[s];
            } else {
                t = t * dims[s] + digits[s];
            }
        }
        (k, t)
    };
    let parts: Vec<(usize, usize)> = (0..total).map(split).collect();

    let mut out = CMat::zeros(out_dim, out_dim);
    for i in 0..total {
        let (ki, ti) = parts[i];
        for j in 0..total {
            let (kj, tj) = parts[j];
            if ti == tj {
                out[(ki, kj)] += m[(i, j)];
            }
        }
    }
    Ok(out)
}

/// Upper-triangular `C` with `C†C = m` for a positive semidefinite `m`.
///
/// Pivots at or below `tol` are clamped to zero and the rest of that row of
/// `C` is zeroed, so rank-deficient inputs factor without permutation.
pub fn cholesky_psd(m: &CMat, tol: f64) -> Result<CMat> {
    if !m.is_square() {
        return Err(Error::Dimension("cholesky of a non-square matrix".into()));
    }
    let scale = m.max_abs().max(1.0);
    let defect = m.hermiticity_defect();
    if defect > tol * scale {
        return Err(Error::NotHermitian(defect));
    }
    let (evals, _) = hermitian_eig(m)?;
    if let Some(&lowest) = evals.last() {
        if lowest < -tol * scale {
            return Err(Error::NotPsd(lowest));
        }
    }

    let n = m.rows;
    let mut c = CMat::zeros(n, n);
    for i in 0..n {
        let mut d = m[(i, i)].re;
        for k in 0..i {
            d -= c[(k, i)].norm_sqr();
        }
        if d <= tol * scale {
            continue;
        }
        let piv = d.sqrt();
        c[(i, i)] = Complex64::new(piv, 0.0);
        for j in i + 1..n {
            let mut s = m[(i, j)];
            for k in 0..i {
                s -= c[(k, i)].conj() * c[(k, j)];
            }
            c[(i, j)] = s / piv;
        }
    }
    Ok(c)
}

/// Eigen-decomposition of a Hermitian matrix by cyclic complex Jacobi
/// rotations.
///
/// Returns eigenvalues in descending order and a unitary whose columns are
/// the matching eigenvectors.
pub fn hermitian_eig(m: &CMat) -> Result<(Vec<f64>, CMat)> {
    if !m.is_square() {
        return Err(Error::Dimension("eigen-decomposition of a non-square matrix".into()));
    }
    let scale = m.max_abs().max(1.0);
    let defect = m.hermiticity_defect();
    if defect > DEFAULT_TOL * scale {
        return Err(Error::NotHermitian(defect));
    }

    let n = m.rows;
    // Symmetrize so round-off in the input does not leak into the result.
    let mut a = CMat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = 0.5 * (m[(i, j)] + m[(j, i)].conj());
        }
    }
    let mut v = CMat::identity(n);
    let target = 1e-12 * m.norm().max(f64::MIN_POSITIVE);

    let off_norm = |a: &CMat| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[(i, j)].norm_sqr();
                }
            }
        }
        s.sqrt()
    };

    for _sweep in 0..100 {
        if off_norm(&a) <= target {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                let r = apq.norm();
                if r == 0.0 {
                    continue;
                }
                // Phase e^{-i arg a_pq} on column q makes the pivot real; a
                // real rotation then annihilates it.
                let phase = apq.conj() / r;
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let theta = (aqq - app) / (2.0 * r);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // Rotation block G = [[c, s], [-s·phase, c·phase]] on (p, q).
                let g_pp = Complex64::new(c, 0.0);
                let g_pq = Complex64::new(s, 0.0);
                let g_qp = -phase * s;
                let g_qq = phase * c;

                // a <- a G
                for i in 0..n {
                    let aip = a[(i, p)];
                    let aiq = a[(i, q)];
                    a[(i, p)] = aip * g_pp + aiq * g_qp;
                    a[(i, q)] = aip * g_pq + aiq * g_qq;
                }
                // a <- G† a
                for j in 0..n {
                    let apj = a[(p, j)];
                    let aqj = a[(q, j)];
                    a[(p, j)] = g_pp.conj() * apj + g_qp.conj() * aqj;
                    a[(q, j)] = g_pq.conj() * apj + g_qq.conj() * aqj;
                }
                a[(p, q)] = C0;
                a[(q, p)] = C0;
                // v <- v G
                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = vip * g_pp + viq * g_qp;
                    v[(i, q)] = vip * g_pq + viq * g_qq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].re.total_cmp(&a[(i, i)].re));
    let evals = order.iter().map(|&i| a[(i, i)].re).collect();
    let mut vecs = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..n {
            vecs[(i, dst)] = v[(i, src)];
        }
    }
    Ok((evals, vecs))
}

/// Frobenius distance `‖a − b‖_F`.
pub fn frob_distance(a: &CMat, b: &CMat) -> Result<f64> {
    Ok(a.try_sub(b)?.norm())
}

/// Single-qubit Pauli matrices `[σ0, σx, σy, σz]`, with `σ0` the identity.
pub fn pauli() -> [CMat; 4] {
    let i = Complex64::i();
    [
        CMat::identity(2),
        CMat::from_rows(&[[C0, C1], [C1, C0]]),
        CMat::from_rows(&[[C0, -i], [i, C0]]),
        CMat::from_rows(&[[C1, C0], [C0, -C1]]),
    ]
}
