//! Small dense linear algebra and scalar root finding.
//!
//! Everything here works on matrices of dimension at most ~8, so the
//! eigen-solver is a plain cyclic Jacobi iteration.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{check_dim, Error, Result};

/// Default tolerance for rank and pseudo-inverse cut-offs.
pub const DEFAULT_TOL: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-12;
const ROOT_MAX_ITERS: usize = 10_000;

/// A square symmetric matrix.
///
/// Construction symmetrizes the input, so `m[(i, j)] == m[(j, i)]` holds
/// exactly afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Checks symmetry within a relative tolerance of 1e-12 and symmetrizes.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::Invalid("matrix dimension must be at least 1".into()));
        }
        let scale = m.amax().max(1.0);
        let asym = (&m - m.transpose()).amax();
        if !(asym <= SYMMETRY_TOL * scale) {
            return Err(Error::Invalid(format!(
                "matrix is not symmetric (max asymmetry {asym:e})"
            )));
        }
        Ok(Self::symmetrize(m))
    }

    /// Averages `m` with its transpose. Used for results of arithmetic that
    /// is symmetric in exact arithmetic.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        Self((m + t) * 0.5)
    }

    pub fn identity(p: usize) -> Self {
        Self(DMatrix::identity(p, p))
    }

    pub fn zeros(p: usize) -> Self {
        Self(DMatrix::zeros(p, p))
    }

    /// `v vᵀ`.
    pub fn outer(v: &DVector<f64>) -> Self {
        Self(v * v.transpose())
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(&self.0 * s)
    }

    pub fn add(&self, other: &SymMatrix) -> Self {
        Self(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> Self {
        Self(&self.0 - &other.0)
    }

    /// Determinant via LU with partial pivoting.
    pub fn det(&self) -> f64 {
        self.0.clone().lu().determinant()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Quadratic form `xᵀ M x`.
    pub fn quad(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.0 * x))
    }

    /// Inverse of a regular matrix; `None` when the LU factorization is
    /// singular or the matrix is numerically rank deficient.
    pub fn inverse(&self) -> Option<SymMatrix> {
        if sym_rank(self, DEFAULT_TOL) < self.dim() {
            return None;
        }
        self.0.clone().try_inverse().map(Self::symmetrize)
    }

    pub fn eigen(&self) -> SymEigen {
        jacobi_eigen(self)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen()
            .values
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.0)
    }
}

impl Deref for SymMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl Serialize for SymMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let m = matrix_from_rows(&rows).map_err(serde::de::Error::custom)?;
        SymMatrix::new(m).map_err(serde::de::Error::custom)
    }
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(Error::Invalid("empty matrix".into()));
    }
    let ncols = rows[0].len();
    for r in rows {
        check_dim(ncols, r.len())?;
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Serde adapter storing a general matrix as a list of rows.
pub mod rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        super::matrix_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        super::matrix_from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Eigen-decomposition of a symmetric matrix. Column `k` of `vectors`
/// belongs to `values[k]`.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

fn jacobi_eigen(m: &SymMatrix) -> SymEigen {
    let n = m.dim();
    let mut a = m.as_matrix().clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let norm = a.norm();
    if norm == 0.0 {
        return SymEigen {
            values: vec![0.0; n],
            vectors: v,
        };
    }
    for _sweep in 0..60 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() <= 0.5 * f64::EPSILON * norm {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
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
    SymEigen {
        values: (0..n).map(|i| a[(i, i)]).collect(),
        vectors: v,
    }
}

fn cutoff(values: &[f64], tol: f64) -> f64 {
    let largest = values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    tol * largest.max(1.0)
}

/// Number of eigenvalues with magnitude above `tol · max(1, |λ|max)`.
pub fn sym_rank(m: &SymMatrix, tol: f64) -> usize {
    let eig = m.eigen();
    let cut = cutoff(&eig.values, tol);
    eig.values.iter().filter(|v| v.abs() > cut).count()
}

/// Moore-Penrose inverse; eigenvalues below the rank cut-off are treated as
/// zero. For regular `m` this is the ordinary inverse.
pub fn generalized_inverse(m: &SymMatrix, tol: f64) -> SymMatrix {
    let eig = m.eigen();
    let cut = cutoff(&eig.values, tol);
    let n = m.dim();
    let mut g = DMatrix::<f64>::zeros(n, n);
    for (k, &lambda) in eig.values.iter().enumerate() {
        if lambda.abs() > cut {
            let col = eig.vectors.column(k);
            g += (col * col.transpose()) / lambda;
        }
    }
    SymMatrix::symmetrize(g)
}

/// Orthogonal projector onto the column space of `m`.
pub fn range_projector(m: &SymMatrix, tol: f64) -> SymMatrix {
    let eig = m.eigen();
    let cut = cutoff(&eig.values, tol);
    let n = m.dim();
    let mut p = DMatrix::<f64>::zeros(n, n);
    for (k, &lambda) in eig.values.iter().enumerate() {
        if lambda.abs() > cut {
            let col = eig.vectors.column(k);
            p += col * col.transpose();
        }
    }
    SymMatrix::symmetrize(p)
}

/// `M1 ≥ M2` in the Loewner order: the smallest eigenvalue of `M1 − M2`
/// is at least `−tol`.
pub fn loewner_geq(m1: &SymMatrix, m2: &SymMatrix, tol: f64) -> Result<bool> {
    check_dim(m1.dim(), m2.dim())?;
    Ok(m1.sub(m2).min_eigenvalue() >= -tol)
}

/// Column rank of a general matrix by modified Gram-Schmidt with a
/// relative drop tolerance.
pub fn column_rank(a: &DMatrix<f64>, tol: f64) -> usize {
    let scale = a.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0;
    }
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for col in a.column_iter() {
        let mut v: DVector<f64> = col.into_owned();
        for _ in 0..2 {
            for q in &basis {
                let r = q.dot(&v);
                v -= q * r;
            }
        }
        let n = v.norm();
        if n > tol * scale {
            basis.push(v / n);
        }
    }
    basis.len()
}

/// Root of `f` on `[lo, hi]` by bisection with secant acceleration.
///
/// Stops once `|f(x)| ≤ tol` or the bracket is narrower than `tol`. The
/// returned value always lies in `[lo, hi]`.
pub fn solve_root_bracketed<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    if !(lo < hi) {
        return Err(Error::Invalid(format!("empty bracket [{lo}, {hi}]")));
    }
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() || fa.is_nan() || fb.is_nan() {
        return Err(Error::NoBracket {
            lo,
            hi,
            flo: fa,
            fhi: fb,
        });
    }
    let mut use_secant = true;
    for _ in 0..ROOT_MAX_ITERS {
        let width = b - a;
        let mid = 0.5 * (a + b);
        let mut x = mid;
        if use_secant {
            let s = b - fb * (b - a) / (fb - fa);
            if s.is_finite() && s > a && s < b {
                x = s;
            }
        }
        let fx = f(x);
        if fx == 0.0 || fx.abs() <= tol {
            return Ok(x);
        }
        if fx.signum() == fa.signum() {
            a = x;
            fa = fx;
        } else {
            b = x;
            fb = fx;
        }
        // fall back to a plain bisection whenever the secant step stalls
        use_secant = (b - a) < 0.5 * width;
        if b - a <= tol {
            return Ok(0.5 * (a + b));
        }
    }
    Err(Error::NoConvergence(ROOT_MAX_ITERS))
}
