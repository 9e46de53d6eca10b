//! τ-periodic vector signals in a truncated complex Fourier basis.
//!
//! A [`SignalBasis`] of order `K` on `m` channels spans the functions
//! `φ_k(t) e_c` with `φ_k(t) = exp(i k ω t) / √τ`, `ω = 2π/τ`, `k = -K..=K`.
//! Coefficient vectors are stored channel-major: index `c (2K+1) + (k + K)`.
//! Signals built from real data satisfy `coeff(c, -k) = conj(coeff(c, k))`.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector};

/// Default number of quadrature points per period.
pub const DEFAULT_GRID: usize = 4096;

/// Maximum tolerated relative imaginary residue when evaluating a signal.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// A real vector-valued function of time, periodic with the basis period.
pub trait TimeSignal: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, t: f64) -> DVector<f64>;

    /// Times in `[0, τ)` where the signal (or a derivative) may jump.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// Closure-backed signal.
#[derive(Clone)]
pub struct FnSignal {
    dim: usize,
    f: Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>,
    breakpoints: Vec<f64>,
}

impl FnSignal {
    pub fn new(dim: usize, f: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static) -> Self {
        Self {
            dim,
            f: Arc::new(f),
            breakpoints: Vec::new(),
        }
    }

    pub fn scalar(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(1, move |t| DVector::from_element(1, f(t)))
    }

    pub fn with_breakpoints(mut self, breakpoints: Vec<f64>) -> Self {
        self.breakpoints = breakpoints;
        self
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(dim, move |_| DVector::zeros(dim))
    }
}

impl TimeSignal for FnSignal {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, t: f64) -> DVector<f64> {
        (self.f)(t)
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.breakpoints.clone()
    }
}

/// Several real signals with the same channel count, evaluated side by side.
///
/// Used to drive the integrator with many input columns at once.
pub trait BatchSignal: Send + Sync {
    fn channels(&self) -> usize;

    fn columns(&self) -> usize;

    /// Channel-by-column matrix of values at `t`.
    fn eval(&self, t: f64) -> DMatrix<f64>;

    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

pub struct SignalBatch<'a> {
    signals: Vec<&'a dyn TimeSignal>,
    channels: usize,
}

impl<'a> SignalBatch<'a> {
    pub fn new(signals: Vec<&'a dyn TimeSignal>) -> Result<Self> {
        let channels = signals.first().map_or(0, |s| s.dim());
        if signals.iter().any(|s| s.dim() != channels) {
            return Err(Error::Dimension("signals in a batch must share a channel count".into()));
        }
        Ok(Self { signals, channels })
    }

    pub fn single(signal: &'a dyn TimeSignal) -> Self {
        Self {
            channels: signal.dim(),
            signals: vec![signal],
        }
    }
}

impl BatchSignal for SignalBatch<'_> {
    fn channels(&self) -> usize {
        self.channels
    }

    fn columns(&self) -> usize {
        self.signals.len()
    }

    fn eval(&self, t: f64) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.channels, self.signals.len());
        for (j, s) in self.signals.iter().enumerate() {
            m.set_column(j, &s.value(t));
        }
        m
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.signals.iter().flat_map(|s| s.breakpoints()).collect()
    }
}

/// Truncated Fourier basis of `L²(0, τ; ℝ^m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalBasis {
    pub tau: f64,
    #[serde(rename = "K")]
    pub order: usize,
    #[serde(rename = "m")]
    pub channels: usize,
}

impl SignalBasis {
    pub fn new(tau: f64, order: usize, channels: usize) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("period must be positive, got {tau}")));
        }
        if channels == 0 {
            return Err(Error::Config("a signal basis needs at least one channel".into()));
        }
        Ok(Self {
            tau,
            order,
            channels,
        })
    }

    pub fn per_channel(&self) -> usize {
        2 * self.order + 1
    }

    pub fn len(&self) -> usize {
        self.channels * self.per_channel()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn omega(&self) -> f64 {
        2.0 * PI / self.tau
    }

    pub fn index(&self, channel: usize, k: i64) -> usize {
        debug_assert!(k.unsigned_abs() as usize <= self.order && channel < self.channels);
        channel * self.per_channel() + (k + self.order as i64) as usize
    }

    /// Inverse of [`SignalBasis::index`].
    pub fn channel_and_frequency(&self, index: usize) -> (usize, i64) {
        let p = self.per_channel();
        (index / p, (index % p) as i64 - self.order as i64)
    }

    /// `φ_k(t)` for `k = -K..=K`.
    pub fn functions_at(&self, t: f64) -> Vec<Complex64> {
        let n = self.order;
        let scale = 1.0 / self.tau.sqrt();
        let step = Complex64::from_polar(1.0, self.omega() * t);
        let mut out = vec![Complex64::new(0.0, 0.0); 2 * n + 1];
        out[n] = Complex64::new(scale, 0.0);
        let mut cur = Complex64::new(scale, 0.0);
        for k in 1..=n {
            // Recompute periodically to avoid drift from repeated products.
            cur = if k % 16 == 0 {
                Complex64::from_polar(scale, self.omega() * t * k as f64)
            } else {
                cur * step
            };
            out[n + k] = cur;
            out[n - k] = cur.conj();
        }
        out
    }

    pub fn same_as(&self, other: &SignalBasis) -> bool {
        self.order == other.order
            && self.channels == other.channels
            && (self.tau - other.tau).abs() <= 1e-12 * self.tau
    }

    pub fn ensure_same(&self, other: &SignalBasis) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "basis mismatch: (tau={}, K={}, m={}) vs (tau={}, K={}, m={})",
                self.tau, self.order, self.channels, other.tau, other.order, other.channels
            )))
        }
    }

    /// Same period and channel count, a different truncation order.
    pub fn with_order(&self, order: usize) -> Self {
        Self { order, ..*self }
    }

    /// Coefficient-vector indices of `|k| <= max_freq` on every channel.
    pub fn low_frequency_indices(&self, max_freq: usize) -> Vec<usize> {
        let kmax = max_freq.min(self.order) as i64;
        (0..self.channels)
            .flat_map(|c| (-kmax..=kmax).map(move |k| (c, k)))
            .map(|(c, k)| self.index(c, k))
            .collect()
    }
}

/// One quadrature node over a period: time, trapezoid weight, and whether
/// the value should be taken as a left limit.
#[derive(Debug, Clone, Copy)]
pub struct QuadNode {
    pub t: f64,
    pub weight: f64,
    pub left: bool,
}

/// Composite trapezoid nodes over `[start, start + τ]` with approximately
/// `grid` uniform intervals, split so that no interval straddles a breakpoint.
pub fn period_nodes(tau: f64, start: f64, grid: usize, breakpoints: &[f64]) -> Vec<QuadNode> {
    let mut nodes = Vec::with_capacity(grid + 2 * breakpoints.len() + 2);
    for (a, b) in period_knots(tau, breakpoints).windows(2).map(|w| (w[0], w[1])) {
        let steps = segment_steps(b - a, tau / grid as f64);
        let h = (b - a) / steps as f64;
        for j in 0..=steps {
            let t = if j == steps { b } else { a + j as f64 * h };
            let weight = if j == 0 || j == steps { 0.5 * h } else { h };
            nodes.push(QuadNode {
                t: start + t,
                weight,
                left: j == steps,
            });
        }
    }
    nodes
}

/// Sorted distinct knots `0 = k_0 < ... < k_m = τ` including the breakpoints
/// reduced modulo τ.
pub(crate) fn period_knots(tau: f64, breakpoints: &[f64]) -> Vec<f64> {
    let tol = 1e-12 * tau;
    let mut knots = vec![0.0, tau];
    for &b in breakpoints {
        let r = b.rem_euclid(tau);
        if r > tol && r < tau - tol {
            knots.push(r);
        }
    }
    knots.sort_by(f64::total_cmp);
    knots.dedup_by(|a, b| (*a - *b).abs() <= tol);
    knots
}

pub(crate) fn segment_steps(len: f64, h: f64) -> usize {
    ((len / h) - 1e-9).ceil().max(1.0) as usize
}

/// Offset used to evaluate a right-continuous function at a left limit.
pub(crate) fn left_nudge(tau: f64) -> f64 {
    1e-12 * tau.max(1.0)
}

/// Signal in the truncated Fourier basis.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicSignal {
    basis: SignalBasis,
    coeffs: CVector,
}

impl PeriodicSignal {
    pub fn zeros(basis: SignalBasis) -> Self {
        Self {
            basis,
            coeffs: CVector::zeros(basis.len()),
        }
    }

    pub fn from_coeffs(basis: SignalBasis, coeffs: CVector) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return Err(Error::Dimension(format!(
                "expected {} coefficients, got {}",
                basis.len(),
                coeffs.len()
            )));
        }
        Ok(Self { basis, coeffs })
    }

    /// The single basis function `φ_k e_channel`.
    pub fn basis_function(basis: SignalBasis, channel: usize, k: i64) -> Self {
        let mut s = Self::zeros(basis);
        s.coeffs[basis.index(channel, k)] = Complex64::new(1.0, 0.0);
        s
    }

    pub fn basis(&self) -> &SignalBasis {
        &self.basis
    }

    pub fn coeffs(&self) -> &CVector {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> CVector {
        self.coeffs
    }

    pub fn coeff(&self, channel: usize, k: i64) -> Complex64 {
        self.coeffs[self.basis.index(channel, k)]
    }

    /// Orthogonal projection of `f` by composite trapezoid quadrature.
    pub fn project(f: &dyn TimeSignal, basis: SignalBasis, grid: usize) -> Result<Self> {
        if f.dim() != basis.channels {
            return Err(Error::Dimension(format!(
                "signal has {} channels, basis has {}",
                f.dim(),
                basis.channels
            )));
        }
        let nudge = left_nudge(basis.tau);
        let mut acc = CoefficientAccumulator::new(basis, 1);
        for node in period_nodes(basis.tau, 0.0, grid, &f.breakpoints()) {
            let v = f.value(if node.left { node.t - nudge } else { node.t });
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!("non-finite sample at t = {}", node.t)));
            }
            acc.add(node.t, node.weight, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()));
        }
        Self::from_coeffs(basis, acc.finish().column(0).into_owned())
    }

    pub fn project_fn(basis: SignalBasis, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        Self::project(&FnSignal::scalar(f), basis, DEFAULT_GRID)
    }

    /// `⟨f, g⟩ = Σ f_k conj(g_k)`.
    pub fn inner_product(&self, other: &PeriodicSignal) -> Result<Complex64> {
        self.basis.ensure_same(&other.basis)?;
        Ok(self
            .coeffs
            .iter()
            .zip(other.coeffs.iter())
            .map(|(a, b)| a * b.conj())
            .sum())
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest violation of conjugate symmetry, relative to the coefficient norm.
    pub fn symmetry_residue(&self) -> f64 {
        let n = self.norm();
        if n == 0.0 {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for c in 0..self.basis.channels {
            for k in 0..=self.basis.order as i64 {
                let d = self.coeff(c, k) - self.coeff(c, -k).conj();
                worst = worst.max(d.norm());
            }
        }
        worst / n
    }

    /// Complex value `Σ c_k φ_k(t)` per channel.
    pub fn complex_value(&self, t: f64) -> Vec<Complex64> {
        let phi = self.basis.functions_at(t.rem_euclid(self.basis.tau));
        let p = self.basis.per_channel();
        (0..self.basis.channels)
            .map(|c| {
                self.coeffs.as_slice()[c * p..(c + 1) * p]
                    .iter()
                    .zip(&phi)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// Real value at `t` (reduced modulo τ). Fails if the imaginary residue
    /// exceeds [`SYMMETRY_TOL`] relative to the coefficient norm.
    pub fn evaluate(&self, t: f64) -> Result<DVector<f64>> {
        let vals = self.complex_value(t);
        let scale = self.norm() / self.basis.tau.sqrt();
        let residue = vals.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
        if scale > 0.0 && residue > SYMMETRY_TOL * scale {
            return Err(Error::CorruptedSignal {
                residue: residue / scale,
            });
        }
        Ok(DVector::from_iterator(vals.len(), vals.iter().map(|v| v.re)))
    }

    /// Conjugate-symmetric parts `(re, im)` with `self = re + i im` and both
    /// representing real signals.
    pub fn split_real_imag(&self) -> (PeriodicSignal, PeriodicSignal) {
        let mut re = Self::zeros(self.basis);
        let mut im = Self::zeros(self.basis);
        let half = Complex64::new(0.5, 0.0);
        let neg_half_i = Complex64::new(0.0, -0.5);
        for c in 0..self.basis.channels {
            for k in -(self.basis.order as i64)..=self.basis.order as i64 {
                let a = self.coeff(c, k);
                let b = self.coeff(c, -k).conj();
                let i = self.basis.index(c, k);
                re.coeffs[i] = (a + b) * half;
                im.coeffs[i] = (a - b) * neg_half_i;
            }
        }
        (re, im)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            basis: self.basis,
            coeffs: &self.coeffs * Complex64::new(s, 0.0),
        }
    }

    pub fn add(&self, other: &PeriodicSignal) -> Result<Self> {
        self.basis.ensure_same(&other.basis)?;
        Ok(Self {
            basis: self.basis,
            coeffs: &self.coeffs + &other.coeffs,
        })
    }

    pub fn sub(&self, other: &PeriodicSignal) -> Result<Self> {
        self.basis.ensure_same(&other.basis)?;
        Ok(Self {
            basis: self.basis,
            coeffs: &self.coeffs - &other.coeffs,
        })
    }

    /// Linear combination `Σ w_i s_i` of signals sharing a basis.
    pub fn combination(basis: SignalBasis, terms: &[(f64, &PeriodicSignal)]) -> Result<Self> {
        let mut out = Self::zeros(basis);
        for (w, s) in terms {
            basis.ensure_same(&s.basis)?;
            out.coeffs += &s.coeffs * Complex64::new(*w, 0.0);
        }
        Ok(out)
    }

    /// Copy into a basis of another order, truncating or zero-padding.
    pub fn reorder(&self, order: usize) -> Self {
        let basis = self.basis.with_order(order);
        let mut out = Self::zeros(basis);
        let kmax = order.min(self.basis.order) as i64;
        for c in 0..basis.channels {
            for k in -kmax..=kmax {
                out.coeffs[basis.index(c, k)] = self.coeff(c, k);
            }
        }
        out
    }

    pub fn to_json(&self) -> SignalJson {
        let p = self.basis.per_channel();
        let rows = |f: fn(&Complex64) -> f64| -> Vec<Vec<f64>> {
            (0..self.basis.channels)
                .map(|c| self.coeffs.as_slice()[c * p..(c + 1) * p].iter().map(f).collect())
                .collect()
        };
        SignalJson {
            tau: self.basis.tau,
            order: self.basis.order,
            channels: self.basis.channels,
            coeffs_re: rows(|c| c.re),
            coeffs_im: rows(|c| c.im),
        }
    }

    pub fn from_json(json: &SignalJson) -> Result<Self> {
        let basis = SignalBasis::new(json.tau, json.order, json.channels)?;
        let p = basis.per_channel();
        let shape_ok = |rows: &Vec<Vec<f64>>| rows.len() == basis.channels && rows.iter().all(|r| r.len() == p);
        if !shape_ok(&json.coeffs_re) || !shape_ok(&json.coeffs_im) {
            return Err(Error::Config(format!(
                "signal coefficients must have shape ({}, {})",
                basis.channels, p
            )));
        }
        let coeffs = CVector::from_iterator(
            basis.len(),
            json.coeffs_re
                .iter()
                .flatten()
                .zip(json.coeffs_im.iter().flatten())
                .map(|(&re, &im)| Complex64::new(re, im)),
        );
        Self::from_coeffs(basis, coeffs)
    }

    /// Writes `t, value_0, ...` rows on a uniform grid over `[0, periods·τ)`.
    pub fn write_csv(&self, path: &Path, samples_per_period: usize, periods: usize) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(f, "t")?;
        for c in 0..self.basis.channels {
            write!(f, ",value_{c}")?;
        }
        writeln!(f)?;
        let n = samples_per_period * periods;
        for i in 0..n {
            let t = i as f64 * self.basis.tau / samples_per_period as f64;
            let v = self.evaluate(t)?;
            write!(f, "{t}")?;
            for x in v.iter() {
                write!(f, ",{x}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl TimeSignal for PeriodicSignal {
    fn dim(&self) -> usize {
        self.basis.channels
    }

    /// Real part only; symmetry is not checked on this hot path.
    fn value(&self, t: f64) -> DVector<f64> {
        let v = self.complex_value(t);
        DVector::from_iterator(v.len(), v.iter().map(|c| c.re))
    }
}

/// JSON layout `{tau, K, m, coeffs_re, coeffs_im}` with `(m, 2K+1)` arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignalJson {
    pub tau: f64,
    #[serde(rename = "K")]
    pub order: usize,
    #[serde(rename = "m")]
    pub channels: usize,
    pub coeffs_re: Vec<Vec<f64>>,
    pub coeffs_im: Vec<Vec<f64>>,
}

impl Serialize for PeriodicSignal {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for PeriodicSignal {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let json = SignalJson::deserialize(d)?;
        PeriodicSignal::from_json(&json).map_err(serde::de::Error::custom)
    }
}

/// Accumulates `∫ y(t) conj(φ_k(t)) dt` for a batch of real outputs.
pub struct CoefficientAccumulator {
    basis: SignalBasis,
    coeffs: CMatrix,
}

impl CoefficientAccumulator {
    pub fn new(basis: SignalBasis, columns: usize) -> Self {
        Self {
            basis,
            coeffs: CMatrix::zeros(basis.len(), columns),
        }
    }

    /// Adds `weight · y · conj(φ_k(t))`, with `y` of shape `(m, columns)`.
    pub fn add(&mut self, t: f64, weight: f64, y: &DMatrix<f64>) {
        let phi = self.basis.functions_at(t.rem_euclid(self.basis.tau));
        let p = self.basis.per_channel();
        for c in 0..self.basis.channels {
            for (j, ph) in phi.iter().enumerate() {
                let w = ph.conj() * weight;
                let row = c * p + j;
                for col in 0..y.ncols() {
                    self.coeffs[(row, col)] += w * y[(c, col)];
                }
            }
        }
    }

    pub fn finish(self) -> CMatrix {
        self.coeffs
    }
}

/// Real probe signals spanning a basis: per channel the constant and the
/// cosine/sine pair of each harmonic, all scaled by `1/√τ`.
///
/// Probe column `c (2K+1) + j` is the constant for `j = 0`, `cos(m ω t)` for
/// `j = 2m-1` and `sin(m ω t)` for `j = 2m`.
pub struct RealProbes {
    basis: SignalBasis,
}

impl RealProbes {
    pub fn new(basis: SignalBasis) -> Self {
        Self { basis }
    }

    /// Combines responses to the real probes (one column each) into the
    /// responses to the complex basis functions, by linearity.
    pub fn to_basis_columns(&self, probe_cols: &CMatrix) -> CMatrix {
        let b = self.basis;
        let mut out = CMatrix::zeros(probe_cols.nrows(), b.len());
        let i = Complex64::new(0.0, 1.0);
        for c in 0..b.channels {
            let base = c * b.per_channel();
            out.set_column(b.index(c, 0), &probe_cols.column(base));
            for m in 1..=b.order {
                let cos = probe_cols.column(base + 2 * m - 1);
                let sin = probe_cols.column(base + 2 * m);
                out.set_column(b.index(c, m as i64), &(cos + sin * i));
                out.set_column(b.index(c, -(m as i64)), &(cos - sin * i));
            }
        }
        out
    }
}

impl BatchSignal for RealProbes {
    fn channels(&self) -> usize {
        self.basis.channels
    }

    fn columns(&self) -> usize {
        self.basis.len()
    }

    fn eval(&self, t: f64) -> DMatrix<f64> {
        let b = self.basis;
        let scale = 1.0 / b.tau.sqrt();
        let w = b.omega();
        let mut m = DMatrix::zeros(b.channels, b.len());
        for c in 0..b.channels {
            let base = c * b.per_channel();
            m[(c, base)] = scale;
            for k in 1..=b.order {
                let (s, co) = (w * k as f64 * t).sin_cos();
                m[(c, base + 2 * k - 1)] = scale * co;
                m[(c, base + 2 * k)] = scale * s;
            }
        }
        m
    }
}

pub fn real_to_complex_matrix(m: &DMatrix<f64>) -> CMatrix {
    m.map(|v| Complex64::new(v, 0.0))
}
