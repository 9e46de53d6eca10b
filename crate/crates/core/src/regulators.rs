//! Controller synthesis on truncated steady-state operators: periodic
//! feedforward, error feedback with a finite internal model, the robust
//! controller on the full output space, and its approximate finite variant.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{Drive, EvolutionFamily, NodeVisit};
use crate::lifting::LiftedSteadyStateOperator;
use crate::linalg::{self, CMatrix, CVector, ComplexMatrixJson, PINV_RTOL, RANK_RTOL};
use crate::signal::{BatchSignal, FnSignal, PeriodicSignal, SignalBasis, SignalBatch, TimeSignal, DEFAULT_GRID};

/// Relative residual above which a regulation equation counts as unsolvable.
pub const REGULATION_RESIDUAL_TOL: f64 = 1e-6;
/// Smallest singular value of `𝒫` below which the robust design warns.
pub const SURJECTIVITY_WARN: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedforwardLaw {
    pub u_reg: PeriodicSignal,
    /// `‖𝒫u_reg - (y_ref - 𝒫_d w)‖`.
    pub residual: f64,
}

/// `u_reg = 𝒫⁺(y_ref - 𝒫_d w)`.
pub fn synthesize_feedforward(
    p: &LiftedSteadyStateOperator,
    pd_w: &PeriodicSignal,
    y_ref: &PeriodicSignal,
) -> Result<FeedforwardLaw> {
    p.out_basis.ensure_same(pd_w.basis())?;
    p.out_basis.ensure_same(y_ref.basis())?;
    let rhs = y_ref.sub(pd_w)?;
    let pinv = linalg::pinv(&p.matrix, PINV_RTOL)?;
    let u_reg = PeriodicSignal::from_coeffs(p.in_basis, &pinv * rhs.coeffs())?;
    let residual = p.apply(&u_reg)?.sub(&rhs)?.norm();
    Ok(FeedforwardLaw { u_reg, residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    OrpFeedback,
    Robust,
    ApproxRobust,
}

/// Discrete-time error feedback controller
/// `z_{n+1} = G₁z_n + G₂(ŷ_n - y_ref)`, `u_n = K z_n`.
#[derive(Debug, Clone)]
pub struct FeedbackController {
    pub kind: ControllerKind,
    pub in_basis: SignalBasis,
    pub out_basis: SignalBasis,
    pub g1: CMatrix,
    pub g2: CMatrix,
    pub k0: CMatrix,
    pub q: Option<CMatrix>,
    pub epsilon: f64,
    pub y_n_indices: Option<Vec<usize>>,
    /// Largest real part of `σ(G₂𝒫K₀Q)` at synthesis time.
    pub spectral_abscissa: f64,
}

impl FeedbackController {
    pub fn dim(&self) -> usize {
        self.g1.nrows()
    }

    /// `K = ε K₀ Q` (or `ε K₀` without `Q`).
    pub fn gain(&self) -> CMatrix {
        let eps = Complex64::new(self.epsilon, 0.0);
        match &self.q {
            Some(q) => &self.k0 * q * eps,
            None => &self.k0 * eps,
        }
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self {
            epsilon,
            ..self.clone()
        }
    }

    /// `Q_N` as an `r × N_y` coordinate restriction (identity without `Y_N`).
    pub fn output_restriction(&self) -> CMatrix {
        restriction(self.out_basis.len(), self.y_n_indices.as_deref())
    }
}

fn restriction(n: usize, indices: Option<&[usize]>) -> CMatrix {
    match indices {
        None => linalg::identity(n),
        Some(idx) => {
            let mut m = CMatrix::zeros(idx.len(), n);
            for (r, &i) in idx.iter().enumerate() {
                m[(r, i)] = Complex64::new(1.0, 0.0);
            }
            m
        }
    }
}

fn hurwitz_abscissa(m: &CMatrix) -> Result<f64> {
    Ok(linalg::spectral_abscissa(&linalg::eigenvalues(m)?))
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::Config(format!("gain epsilon must be finite and non-negative, got {epsilon}")));
    }
    Ok(())
}

/// Error feedback controller with internal model spanned by the regulating
/// inputs of the reference and of each disturbance profile.
pub fn synthesize_orp_feedback(
    p: &LiftedSteadyStateOperator,
    pd_wks: &[PeriodicSignal],
    y_ref: &PeriodicSignal,
    epsilon: f64,
) -> Result<FeedbackController> {
    check_epsilon(epsilon)?;
    p.out_basis.ensure_same(y_ref.basis())?;
    let pinv = linalg::pinv(&p.matrix, PINV_RTOL)?;
    let mut targets = vec![y_ref.clone()];
    targets.extend(pd_wks.iter().cloned());
    let mut selected: Vec<CVector> = Vec::new();
    for (index, target) in targets.iter().enumerate() {
        p.out_basis.ensure_same(target.basis())?;
        let rhs = target.coeffs();
        let scale = linalg::vec_norm(rhs);
        if scale == 0.0 {
            continue;
        }
        let u = &pinv * rhs;
        let residual = linalg::vec_norm(&(&p.matrix * &u - rhs));
        if residual > REGULATION_RESIDUAL_TOL * scale {
            return Err(Error::UnsolvableRegulation {
                index,
                residual,
                tolerance: REGULATION_RESIDUAL_TOL * scale,
            });
        }
        let mut trial = selected.clone();
        let norm = linalg::vec_norm(&u);
        if norm == 0.0 {
            continue;
        }
        trial.push(u.clone() / Complex64::new(norm, 0.0));
        let m = CMatrix::from_columns(&trial);
        if linalg::numerical_rank(&m, RANK_RTOL) == trial.len() {
            selected.push(u);
        }
    }
    if selected.is_empty() {
        return Err(Error::NothingToTrack);
    }
    let r = selected.len();
    let k0 = CMatrix::from_columns(&selected);
    let pk0 = &p.matrix * &k0;
    let gram = pk0.adjoint() * &pk0;
    let svd = linalg::sorted_svd(&gram)?;
    let q = CMatrix::from_fn(r, r, |i, j| svd.v[(i, j)] / svd.s[j].sqrt());
    let g2 = -(&pk0 * &q).adjoint();
    let abscissa = hurwitz_abscissa(&(&g2 * &pk0 * &q))?;
    Ok(FeedbackController {
        kind: ControllerKind::OrpFeedback,
        in_basis: p.in_basis,
        out_basis: p.out_basis,
        g1: linalg::identity(r),
        g2,
        k0,
        q: Some(q),
        epsilon,
        y_n_indices: None,
        spectral_abscissa: abscissa,
    })
}

/// Robust controller on the whole truncated output space:
/// `G₁ = I`, `K₀ = -(G₂𝒫)⁺`, `G₂ = I` unless supplied.
pub fn synthesize_robust(p: &LiftedSteadyStateOperator, g2: Option<CMatrix>, epsilon: f64) -> Result<FeedbackController> {
    check_epsilon(epsilon)?;
    let ny = p.out_basis.len();
    let s = linalg::singular_values(&p.matrix);
    let ratio = linalg::rank_ratio(&p.matrix);
    if p.matrix.nrows() > p.matrix.ncols() || ratio < RANK_RTOL {
        let ratio = if p.matrix.nrows() > p.matrix.ncols() { 0.0 } else { ratio };
        return Err(Error::SurjectivityFailure { ratio });
    }
    if s.last().copied().unwrap_or(0.0) < SURJECTIVITY_WARN {
        log::warn!("smallest singular value of P is {:e}", s.last().copied().unwrap_or(0.0));
    }
    let g2 = g2.unwrap_or_else(|| linalg::identity(ny));
    if g2.ncols() != ny {
        return Err(Error::Dimension(format!("G2 has {} columns, output space has {ny}", g2.ncols())));
    }
    let g2p = &g2 * &p.matrix;
    let k0 = -linalg::pinv(&g2p, PINV_RTOL)?;
    let abscissa = hurwitz_abscissa(&(&g2p * &k0))?;
    if abscissa >= 0.0 {
        return Err(Error::Numerical(format!("sigma(G2 P K0) is not in the open left half plane (abscissa {abscissa:e})")));
    }
    Ok(FeedbackController {
        kind: ControllerKind::Robust,
        in_basis: p.in_basis,
        out_basis: p.out_basis,
        g1: linalg::identity(g2.nrows()),
        g2,
        k0,
        q: None,
        epsilon,
        y_n_indices: None,
        spectral_abscissa: abscissa,
    })
}

/// Approximate robust controller with internal model on `Y_N`, the span of
/// the given output-basis indices.
pub fn synthesize_approx_robust(p: &LiftedSteadyStateOperator, y_n_indices: &[usize], epsilon: f64) -> Result<FeedbackController> {
    check_epsilon(epsilon)?;
    let ny = p.out_basis.len();
    if y_n_indices.is_empty() || y_n_indices.iter().any(|&i| i >= ny) {
        return Err(Error::Dimension("Y_N indices must be non-empty and inside the output basis".into()));
    }
    let r = y_n_indices.len();
    let qn = restriction(ny, Some(y_n_indices));
    let pn = &qn * &p.matrix;
    if r > pn.ncols() {
        return Err(Error::OutputSubspaceNotInRange { ratio: 0.0 });
    }
    let svd = linalg::sorted_svd(&pn)?;
    let ratio = svd.s[r - 1] / svd.s[0];
    if ratio.is_nan() || ratio < RANK_RTOL {
        return Err(Error::OutputSubspaceNotInRange { ratio });
    }
    let g20 = CMatrix::from_fn(r, r, |i, j| svd.u[(j, i)].conj() / svd.s[i]);
    let k0 = -svd.v.columns(0, r).into_owned();
    let g2 = &g20 * &qn;
    let abscissa = hurwitz_abscissa(&(&g2 * &p.matrix * &k0))?;
    if abscissa >= 0.0 {
        return Err(Error::Numerical(format!("sigma(G2 P K0) is not in the open left half plane (abscissa {abscissa:e})")));
    }
    Ok(FeedbackController {
        kind: ControllerKind::ApproxRobust,
        in_basis: p.in_basis,
        out_basis: p.out_basis,
        g1: linalg::identity(r),
        g2,
        k0,
        q: None,
        epsilon,
        y_n_indices: Some(y_n_indices.to_vec()),
        spectral_abscissa: abscissa,
    })
}

/// Output-basis indices of the frequencies `|k| <= max_freq` on every channel.
pub fn low_frequency_subspace(basis: &SignalBasis, max_freq: usize) -> Vec<usize> {
    basis.low_frequency_indices(max_freq)
}

#[derive(Debug, Clone)]
pub struct ErrorEstimate {
    pub norm: f64,
    pub residual: PeriodicSignal,
    /// Steady controller state `z` solving `Q_N𝒫Kz = Q_N(y_ref - 𝒫_d w)`.
    pub z: CVector,
}

/// Predicted steady per-period error `‖(I-Q_N)(𝒫Kz + 𝒫_d w - y_ref)‖` of an
/// approximate robust controller.
pub fn asymptotic_error_estimate(
    ctrl: &FeedbackController,
    p: &LiftedSteadyStateOperator,
    pd_w: &PeriodicSignal,
    y_ref: &PeriodicSignal,
) -> Result<ErrorEstimate> {
    if ctrl.kind != ControllerKind::ApproxRobust {
        return Err(Error::EstimateUnavailable("only defined for approximate robust controllers".into()));
    }
    p.out_basis.ensure_same(&ctrl.out_basis)?;
    p.in_basis.ensure_same(&ctrl.in_basis)?;
    p.out_basis.ensure_same(pd_w.basis())?;
    p.out_basis.ensure_same(y_ref.basis())?;
    let qn = ctrl.output_restriction();
    let pk = &p.matrix * ctrl.gain();
    let lhs = &qn * &pk;
    let target = y_ref.coeffs() - pd_w.coeffs();
    let rhs = &qn * &target;
    let rhs_m = CMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
    let (z, _) = linalg::solve(&lhs, &rhs_m).map_err(|e| Error::EstimateUnavailable(format!("Q_N P K is singular: {e}")))?;
    let z = z.column(0).into_owned();
    let mut e = &pk * &z - target;
    for &i in ctrl.y_n_indices.as_deref().unwrap_or(&[]) {
        e[i] = Complex64::new(0.0, 0.0);
    }
    let residual = PeriodicSignal::from_coeffs(p.out_basis, e)?;
    Ok(ErrorEstimate {
        norm: residual.norm(),
        residual,
        z,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct InternalModelReport {
    pub passes: bool,
    /// `‖G₁ - I‖_F`, zero when `G₁ = I` exactly.
    pub g1_deviation: f64,
    /// `dim Y - rank(G₂)`, the dimension of `ker G₂`.
    pub g2_kernel_dim: usize,
    /// Smallest of the `dim Y` singular values of `G₂` (zero if `G₂` has
    /// fewer rows than `dim Y`).
    pub g2_min_singular: f64,
    pub reason: String,
}

/// Internal model test for `μ = 1`: `G₁ = I` and `ker G₂ = {0}` on the
/// truncated output space.
pub fn check_internal_model(ctrl: &FeedbackController) -> InternalModelReport {
    let g1_deviation = linalg::frobenius(&(&ctrl.g1 - linalg::identity(ctrl.g1.nrows())));
    let ny = ctrl.g2.ncols();
    let s = linalg::singular_values(&ctrl.g2);
    let smax = s.first().copied().unwrap_or(0.0);
    let rank = s.iter().filter(|&&v| v > RANK_RTOL * smax && smax > 0.0).count();
    let g2_min_singular = if s.len() < ny { 0.0 } else { s.last().copied().unwrap_or(0.0) };
    let g2_kernel_dim = ny - rank;
    let reason = if g1_deviation != 0.0 {
        "G1 differs from the identity, so the internal model does not contain the frequency 1".to_string()
    } else if ctrl.dim() < ny {
        format!(
            "dim ker(I - G1) = {} < dim Y = {ny}, so G2 has a kernel of dimension {g2_kernel_dim}",
            ctrl.dim()
        )
    } else if g2_kernel_dim > 0 {
        format!("G2 has a kernel of dimension {g2_kernel_dim}")
    } else {
        "G1 = I and G2 is injective".to_string()
    };
    InternalModelReport {
        passes: g1_deviation == 0.0 && g2_kernel_dim == 0,
        g1_deviation,
        g2_kernel_dim,
        g2_min_singular,
        reason,
    }
}

/// Exact triangle wave: zero mean, amplitude 1, `+1` at `τ/2`, `-1` at `0` and `τ`.
pub fn triangle_wave(tau: f64) -> FnSignal {
    FnSignal::scalar(move |t| {
        let s = t.rem_euclid(tau);
        1.0 - 2.0 * (s - tau / 2.0).abs() / (tau / 2.0)
    })
    .with_breakpoints(vec![0.0, tau / 2.0])
}

pub fn make_triangle_reference(basis: SignalBasis) -> Result<PeriodicSignal> {
    PeriodicSignal::project(&triangle_wave(basis.tau), basis, DEFAULT_GRID)
}

/// Periodic solution `(Π, Γ)` of the regulator equations for one feedforward law.
#[derive(Debug, Clone)]
pub struct RegulatorSolution {
    pub gamma: PeriodicSignal,
    pub pi_samples: Vec<(f64, DVector<f64>)>,
    /// `‖Π(τ) - Π(0)‖`.
    pub periodicity_residual: f64,
    /// `max_t |C(t)Π(t) + D(t)Γ(t) - y_ref(t)|`.
    pub constraint_residual: f64,
}

/// Computes `Π(t) = U(t,0)(I-Â)⁻¹∫U(τ,s)f(s)ds + ∫₀ᵗU(t,s)f(s)ds` with
/// `f = BΓ + B_d w` and checks periodicity and the output constraint.
pub fn verify_regulator_equations(
    ev: &EvolutionFamily,
    law: &FeedforwardLaw,
    w_dist: &dyn TimeSignal,
    y_ref: &dyn TimeSignal,
    grid_size: usize,
) -> Result<RegulatorSolution> {
    let tau = ev.tau();
    let n = ev.plant().dims().states;
    let gamma = law.u_reg.clone();
    let ub = SignalBatch::single(&gamma);
    let wb = SignalBatch::single(w_dist);
    let drive = Drive {
        input: Some(&ub as &dyn BatchSignal),
        disturbance: Some(&wb as &dyn BatchSignal),
    };
    let forced = ev.integrate(0.0, tau, DMatrix::zeros(n, 1), drive, None)?;
    let i_minus_a = linalg::identity(n) - linalg::to_complex(ev.monodromy()?);
    let (pi0, _) = linalg::solve(&i_minus_a, &linalg::to_complex(&forced))?;
    let pi0 = pi0.map(|c| c.re);

    let stride = (tau / ev.step() / grid_size.max(1) as f64).round().max(1.0) as usize;
    let mut samples = Vec::new();
    let mut worst: f64 = 0.0;
    let mut count = 0usize;
    let mut visit = |v: &NodeVisit<'_>| {
        let r = y_ref.value(if v.left { v.t - 1e-12 * tau.max(1.0) } else { v.t });
        for i in 0..r.len() {
            worst = worst.max((v.output[(i, 0)] - r[i]).abs());
        }
        if !v.left {
            if count.is_multiple_of(stride) {
                samples.push((v.t, v.state.column(0).into_owned()));
            }
            count += 1;
        }
    };
    let pi_tau = ev.integrate(0.0, tau, pi0.clone(), drive, Some(&mut visit))?;
    samples.push((tau, pi_tau.column(0).into_owned()));
    Ok(RegulatorSolution {
        gamma,
        pi_samples: samples,
        periodicity_residual: (&pi_tau - &pi0).norm(),
        constraint_residual: worst,
    })
}

/// Exosystem data for `S = I`: reference and a disturbance dictionary with
/// weights `v_k`, so that `w = Σ v_k w^k`.
#[derive(Debug, Clone)]
pub struct ExosystemData {
    pub y_ref: PeriodicSignal,
    pub dictionary: Vec<PeriodicSignal>,
    pub v: Vec<f64>,
}

impl ExosystemData {
    pub fn w_dist(&self) -> Result<PeriodicSignal> {
        let basis = self
            .dictionary
            .first()
            .map(|d| *d.basis())
            .ok_or_else(|| Error::Config("empty disturbance dictionary".into()))?;
        if self.v.len() != self.dictionary.len() {
            return Err(Error::Dimension("weights and dictionary differ in length".into()));
        }
        let terms: Vec<(f64, &PeriodicSignal)> = self.v.iter().copied().zip(&self.dictionary).collect();
        PeriodicSignal::combination(basis, &terms)
    }
}

#[derive(Serialize, Deserialize)]
struct FeedbackJson {
    kind: ControllerKind,
    epsilon: f64,
    in_basis: SignalBasis,
    out_basis: SignalBasis,
    g1: ComplexMatrixJson,
    g2: ComplexMatrixJson,
    k0: ComplexMatrixJson,
    #[serde(default)]
    q: Option<ComplexMatrixJson>,
    #[serde(default)]
    y_n_indices: Option<Vec<usize>>,
    spectral_abscissa: f64,
}

/// Serialized controller file.
#[derive(Debug, Clone)]
pub enum Controller {
    Feedforward(FeedforwardLaw),
    Feedback(FeedbackController),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ControllerJson {
    Feedforward(FeedforwardLaw),
    Feedback(Box<FeedbackJson>),
}

impl Controller {
    pub fn to_json_string(&self) -> Result<String> {
        let j = match self {
            Controller::Feedforward(f) => ControllerJson::Feedforward(f.clone()),
            Controller::Feedback(c) => ControllerJson::Feedback(Box::new(FeedbackJson {
                kind: c.kind,
                epsilon: c.epsilon,
                in_basis: c.in_basis,
                out_basis: c.out_basis,
                g1: (&c.g1).into(),
                g2: (&c.g2).into(),
                k0: (&c.k0).into(),
                q: c.q.as_ref().map(Into::into),
                y_n_indices: c.y_n_indices.clone(),
                spectral_abscissa: c.spectral_abscissa,
            })),
        };
        Ok(serde_json::to_string_pretty(&j)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(match serde_json::from_str::<ControllerJson>(s)? {
            ControllerJson::Feedforward(f) => Controller::Feedforward(f),
            ControllerJson::Feedback(j) => Controller::Feedback(FeedbackController {
                kind: j.kind,
                epsilon: j.epsilon,
                in_basis: j.in_basis,
                out_basis: j.out_basis,
                g1: CMatrix::try_from(&j.g1)?,
                g2: CMatrix::try_from(&j.g2)?,
                k0: CMatrix::try_from(&j.k0)?,
                q: j.q.as_ref().map(CMatrix::try_from).transpose()?,
                y_n_indices: j.y_n_indices,
                spectral_abscissa: j.spectral_abscissa,
            }),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

/// `‖triangle‖²` over one period, `τ/3` for amplitude 1.
pub fn triangle_energy(tau: f64) -> f64 {
    tau / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifting::OperatorSource;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn basis(order: usize) -> SignalBasis {
        SignalBasis::new(2.0 * PI, order, 1).unwrap()
    }

    /// Diagonal operator of the lag `1/(1+ik)`.
    fn lag(order: usize) -> LiftedSteadyStateOperator {
        let b = basis(order);
        let m = CMatrix::from_fn(b.len(), b.len(), |i, j| {
            if i == j {
                let (_, k) = b.channel_and_frequency(i);
                Complex64::new(1.0, 0.0) / Complex64::new(1.0, k as f64)
            } else {
                c(0.0)
            }
        });
        LiftedSteadyStateOperator::new(b, b, m, OperatorSource::Quadrature).unwrap()
    }

    fn identity_op(order: usize) -> LiftedSteadyStateOperator {
        let b = basis(order);
        LiftedSteadyStateOperator::new(b, b, linalg::identity(b.len()), OperatorSource::Quadrature).unwrap()
    }

    #[test]
    fn feedforward_recovers_a_known_input() {
        let p = lag(4);
        let u = PeriodicSignal::project_fn(p.in_basis, |t| 0.3 + t.cos() - 0.2 * (3.0 * t).sin()).unwrap();
        let y = p.apply(&u).unwrap();
        let law = synthesize_feedforward(&p, &PeriodicSignal::zeros(p.out_basis), &y).unwrap();
        assert!(law.residual < 1e-8);
        assert!(law.u_reg.sub(&u).unwrap().norm() < 1e-10);
    }

    #[test]
    fn feedforward_of_zero_is_zero() {
        let p = lag(3);
        let z = PeriodicSignal::zeros(p.out_basis);
        let law = synthesize_feedforward(&p, &z, &z).unwrap();
        assert_eq!(law.u_reg.norm(), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn feedforward_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let p = lag(3);
            let y = PeriodicSignal::project_fn(p.out_basis, move |t| a + b * t.sin()).unwrap();
            let w = PeriodicSignal::project_fn(p.out_basis, move |t| b * (2.0 * t).cos()).unwrap();
            let one = synthesize_feedforward(&p, &w, &y).unwrap();
            let two = synthesize_feedforward(&p, &w.scaled(2.0), &y.scaled(2.0)).unwrap();
            prop_assert!(two.u_reg.sub(&one.u_reg.scaled(2.0)).unwrap().norm() <= 1e-12 * (1.0 + one.u_reg.norm()));
        }
    }

    #[test]
    fn orp_feedback_with_reference_only_has_one_state() {
        let p = lag(3);
        let u = PeriodicSignal::project_fn(p.in_basis, |t| 1.0 + t.sin()).unwrap();
        let y = p.apply(&u).unwrap();
        let ctrl = synthesize_orp_feedback(&p, &[], &y, 0.5).unwrap();
        assert_eq!(ctrl.dim(), 1);
        let col = ctrl.k0.column(0).into_owned();
        assert!(linalg::vec_norm(&(col - u.coeffs())) < 1e-10);
        let m = &ctrl.g2 * &p.matrix * ctrl.gain();
        assert!((m[(0, 0)] + c(0.5)).norm() < 1e-10);
    }

    #[test]
    fn orp_feedback_drops_dependent_profiles() {
        let p = lag(3);
        let y = PeriodicSignal::project_fn(p.out_basis, |t| t.sin()).unwrap();
        let w1 = PeriodicSignal::project_fn(p.out_basis, |t| (2.0 * t).cos()).unwrap();
        let w2 = w1.scaled(-3.0);
        let ctrl = synthesize_orp_feedback(&p, &[w1, w2, PeriodicSignal::zeros(p.out_basis)], &y, 0.1).unwrap();
        assert_eq!(ctrl.dim(), 2);
        let m = &ctrl.g2 * &p.matrix * ctrl.gain() + linalg::identity(2) * c(0.1);
        assert!(linalg::frobenius(&m) < 1e-8);
    }

    #[test]
    fn orp_feedback_needs_something_to_track() {
        let p = lag(2);
        let z = PeriodicSignal::zeros(p.out_basis);
        assert!(matches!(synthesize_orp_feedback(&p, std::slice::from_ref(&z), &z, 0.1), Err(Error::NothingToTrack)));
    }

    #[test]
    fn orp_feedback_rejects_unreachable_targets() {
        let b = basis(2);
        let mut m = linalg::identity(b.len());
        m[(b.index(0, 2), b.index(0, 2))] = c(0.0);
        m[(b.index(0, -2), b.index(0, -2))] = c(0.0);
        let p = LiftedSteadyStateOperator::new(b, b, m, OperatorSource::Quadrature).unwrap();
        let y = PeriodicSignal::project_fn(b, |t| (2.0 * t).cos()).unwrap();
        assert!(matches!(synthesize_orp_feedback(&p, &[], &y, 0.1), Err(Error::UnsolvableRegulation { .. })));
    }

    #[test]
    fn robust_controller_inverts_the_lag() {
        let p = lag(3);
        let ctrl = synthesize_robust(&p, None, 0.3).unwrap();
        let b = p.in_basis;
        for k in -3i64..=3 {
            let i = b.index(0, k);
            assert!((ctrl.k0[(i, i)] + Complex64::new(1.0, k as f64)).norm() < 1e-10);
        }
        let m = &ctrl.g2 * &p.matrix * &ctrl.k0 + linalg::identity(b.len());
        assert!(linalg::frobenius(&m) < 1e-10);
        assert!((ctrl.spectral_abscissa + 1.0).abs() < 1e-10);
        assert!(check_internal_model(&ctrl).passes);
    }

    #[test]
    fn robust_controller_of_identity_has_spectrum_minus_one() {
        let ctrl = synthesize_robust(&identity_op(2), None, 1.0).unwrap();
        assert!(linalg::frobenius(&(&ctrl.k0 + linalg::identity(5))) < 1e-12);
    }

    #[test]
    fn robust_controller_requires_surjectivity() {
        let b = basis(1);
        let mut m = linalg::identity(3);
        m[(0, 0)] = c(0.0);
        let p = LiftedSteadyStateOperator::new(b, b, m, OperatorSource::Quadrature).unwrap();
        assert!(matches!(synthesize_robust(&p, None, 0.1), Err(Error::SurjectivityFailure { .. })));
    }

    #[test]
    fn approx_robust_on_identity_gives_minus_identity() {
        let p = identity_op(3);
        let idx = low_frequency_subspace(&p.out_basis, 1);
        let ctrl = synthesize_approx_robust(&p, &idx, 0.2).unwrap();
        let m = &ctrl.g2 * &p.matrix * &ctrl.k0 + linalg::identity(3);
        assert!(linalg::frobenius(&m) < 1e-12);
        let report = check_internal_model(&ctrl);
        assert!(!report.passes);
        assert_eq!(report.g2_kernel_dim, 4);
    }

    #[test]
    fn approx_robust_requires_y_n_in_range() {
        let b = basis(2);
        let mut m = linalg::identity(b.len());
        m[(b.index(0, 1), b.index(0, 1))] = c(0.0);
        let p = LiftedSteadyStateOperator::new(b, b, m, OperatorSource::Quadrature).unwrap();
        let idx = low_frequency_subspace(&b, 1);
        assert!(matches!(synthesize_approx_robust(&p, &idx, 0.2), Err(Error::OutputSubspaceNotInRange { .. })));
    }

    #[test]
    fn estimate_vanishes_inside_y_n() {
        let p = lag(4);
        let idx = low_frequency_subspace(&p.out_basis, 2);
        let ctrl = synthesize_approx_robust(&p, &idx, 0.2).unwrap();
        let y = PeriodicSignal::project_fn(p.out_basis, |t| 1.0 + (2.0 * t).sin()).unwrap();
        let w = PeriodicSignal::project_fn(p.out_basis, |t| 0.3 * t.cos()).unwrap();
        let est = asymptotic_error_estimate(&ctrl, &p, &w, &y).unwrap();
        assert!(est.norm < 1e-12);
    }

    #[test]
    fn estimate_measures_the_part_outside_y_n() {
        let p = lag(4);
        let idx = low_frequency_subspace(&p.out_basis, 2);
        let ctrl = synthesize_approx_robust(&p, &idx, 0.2).unwrap();
        let y = PeriodicSignal::project_fn(p.out_basis, |t| t.sin() + 0.5 * (3.0 * t).cos()).unwrap();
        let est = asymptotic_error_estimate(&ctrl, &p, &PeriodicSignal::zeros(p.out_basis), &y).unwrap();
        let expect = 0.5 * PI.sqrt();
        assert!((est.norm - expect).abs() < 1e-10, "{} vs {expect}", est.norm);
    }

    #[test]
    fn orp_feedback_fails_internal_model_by_dimension() {
        let p = lag(3);
        let y = PeriodicSignal::project_fn(p.out_basis, |t| 1.0 + t.sin()).unwrap();
        let ctrl = synthesize_orp_feedback(&p, &[], &y, 0.2).unwrap();
        let report = check_internal_model(&ctrl);
        assert!(!report.passes);
        assert!(report.reason.contains("dim ker"));
    }

    #[test]
    fn triangle_reference_peaks_and_has_zero_mean() {
        let b = basis(40);
        let tri = make_triangle_reference(b).unwrap();
        assert!(tri.coeff(0, 0).norm() < 1e-12);
        assert!((tri.evaluate(PI).unwrap()[0] - 1.0).abs() < 0.02);
        assert!((tri.evaluate(0.0).unwrap()[0] + 1.0).abs() < 0.02);
        let quad: f64 = crate::signal::period_nodes(2.0 * PI, 0.0, 8192, &[PI])
            .iter()
            .map(|n| n.weight * triangle_wave(2.0 * PI).value(n.t)[0].powi(2))
            .sum();
        assert!((quad - triangle_energy(2.0 * PI)).abs() < 1e-6);
        assert!((tri.norm().powi(2) - quad).abs() < 1e-5);
    }

    #[test]
    fn controller_json_round_trips() {
        let p = lag(2);
        let ctrl = synthesize_robust(&p, None, 0.3).unwrap();
        let back = Controller::from_json_str(&Controller::Feedback(ctrl.clone()).to_json_string().unwrap()).unwrap();
        match back {
            Controller::Feedback(b) => {
                assert_eq!(b.k0, ctrl.k0);
                assert_eq!(b.kind, ControllerKind::Robust);
            }
            Controller::Feedforward(_) => panic!("wrong variant"),
        }
    }
}
