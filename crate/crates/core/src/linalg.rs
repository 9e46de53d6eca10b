//! Dense complex linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Relative cutoff used by every pseudoinverse in the crate.
pub const PINV_RTOL: f64 = 1e-10;
/// Relative cutoff used for rank decisions.
pub const RANK_RTOL: f64 = 1e-8;

pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|v| Complex64::new(v, 0.0))
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

/// Singular values in descending order. Empty matrices have none.
pub fn singular_values(m: &CMatrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Ratio of the smallest to the largest of the `min(rows, cols)` singular values.
pub fn rank_ratio(m: &CMatrix) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&max), Some(&min)) if max > 0.0 => min / max,
        _ => 0.0,
    }
}

pub fn numerical_rank(m: &CMatrix, rtol: f64) -> usize {
    let s = singular_values(m);
    let Some(&max) = s.first() else { return 0 };
    if max == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rtol * max).count()
}

/// Moore-Penrose pseudoinverse with singular values below `rtol * sigma_max`
/// discarded.
pub fn pinv(m: &CMatrix, rtol: f64) -> Result<CMatrix> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(CMatrix::zeros(m.ncols(), m.nrows()));
    }
    let svd = m.clone().svd(true, true);
    let u = svd
        .u
        .as_ref()
        .ok_or_else(|| Error::Numerical("SVD did not return U".into()))?;
    let v_t = svd
        .v_t
        .as_ref()
        .ok_or_else(|| Error::Numerical("SVD did not return V".into()))?;
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let mut out = CMatrix::zeros(m.ncols(), m.nrows());
    if smax == 0.0 {
        return Ok(out);
    }
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > rtol * smax {
            let vi = v_t.row(i).adjoint();
            let ui = u.column(i).adjoint();
            out += (vi * ui) * Complex64::new(1.0 / s, 0.0);
        }
    }
    Ok(out)
}

/// Sorted singular value decomposition `m = U diag(s) V^*` (thin).
pub struct SortedSvd {
    pub u: CMatrix,
    pub s: Vec<f64>,
    pub v: CMatrix,
}

pub fn sorted_svd(m: &CMatrix) -> Result<SortedSvd> {
    let svd = m.clone().svd(true, true);
    let u = svd
        .u
        .ok_or_else(|| Error::Numerical("SVD did not return U".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD did not return V".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let k = order.len();
    let mut uu = CMatrix::zeros(u.nrows(), k);
    let mut vv = CMatrix::zeros(v_t.ncols(), k);
    let mut s = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        uu.set_column(dst, &u.column(src));
        vv.set_column(dst, &v_t.row(src).adjoint());
        s.push(svd.singular_values[src]);
    }
    Ok(SortedSvd { u: uu, s, v: vv })
}

/// Schur convergence tolerances relative to `‖m‖_F`, tried in order.
const SCHUR_TOLS: [f64; 5] = [1e-14, 1e-13, 1e-12, 1e-11, 1e-10];
const SCHUR_MAX_ITER: usize = 100_000;

/// First tolerance at which the Schur iteration converges.
fn schur_with_fallback<T>(norm: f64, attempt: impl Fn(f64) -> Option<T>) -> Result<T> {
    let scale = norm.max(1.0);
    SCHUR_TOLS
        .iter()
        .find_map(|tol| attempt(tol * scale))
        .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))
}

/// Eigenvalues of a general complex matrix via the complex Schur form.
pub fn eigenvalues(m: &CMatrix) -> Result<Vec<Complex64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "eigenvalues of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = schur_with_fallback(m.norm(), |eps| m.clone().try_schur(eps, SCHUR_MAX_ITER))?;
    let (_, t) = schur.unpack();
    Ok(t.diagonal().iter().copied().collect())
}

pub fn real_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = schur_with_fallback(m.norm(), |eps| m.clone().try_schur(eps, SCHUR_MAX_ITER))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

pub fn spectral_radius(eigs: &[Complex64]) -> f64 {
    eigs.iter().map(|l| l.norm()).fold(0.0, f64::max)
}

pub fn spectral_abscissa(eigs: &[Complex64]) -> f64 {
    eigs.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Solves `m x = rhs` by LU with partial pivoting and reports the 2-norm
/// condition number of `m`.
pub fn solve(m: &CMatrix, rhs: &CMatrix) -> Result<(CMatrix, f64)> {
    let s = singular_values(m);
    let cond = match (s.first(), s.last()) {
        (Some(&a), Some(&b)) if b > 0.0 => a / b,
        _ => f64::INFINITY,
    };
    if !cond.is_finite() || cond > 1e14 {
        return Err(Error::NotStable { condition: cond });
    }
    let x = m
        .clone()
        .lu()
        .solve(rhs)
        .ok_or(Error::NotStable { condition: cond })?;
    Ok((x, cond))
}

pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

pub fn vec_norm(v: &CVector) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Row-major JSON layout of a complex matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplexMatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl From<&CMatrix> for ComplexMatrixJson {
    fn from(m: &CMatrix) -> Self {
        let mut re = Vec::with_capacity(m.len());
        let mut im = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                re.push(m[(i, j)].re);
                im.push(m[(i, j)].im);
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            re,
            im,
        }
    }
}

impl TryFrom<&ComplexMatrixJson> for CMatrix {
    type Error = Error;

    fn try_from(j: &ComplexMatrixJson) -> Result<Self> {
        if j.re.len() != j.rows * j.cols || j.im.len() != j.rows * j.cols {
            return Err(Error::Dimension(format!(
                "matrix payload does not match {}x{}",
                j.rows, j.cols
            )));
        }
        Ok(CMatrix::from_fn(j.rows, j.cols, |r, c| {
            Complex64::new(j.re[r * j.cols + c], j.im[r * j.cols + c])
        }))
    }
}
