//! Hybrid simulation of a periodic plant driven by a per-period controller,
//! the closed-loop matrix `A_e` and gain tuning.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolution::{Drive, EvolutionFamily, NodeVisit};
use crate::lifting::{lift, window_response, Channel, LiftBases, LiftedSystem};
use crate::linalg::{self, CMatrix, CVector};
use crate::regulators::{asymptotic_error_estimate, FeedbackController, FeedforwardLaw};
use crate::signal::{
    left_nudge, BatchSignal, CoefficientAccumulator, PeriodicSignal, SignalBasis, SignalBatch, TimeSignal, DEFAULT_GRID,
};

/// Periods discarded before fitting a decay rate.
pub const FIT_SKIP: usize = 3;
/// Minimum number of usable periods for a rate fit.
pub const FIT_MIN_POINTS: usize = 5;

/// Reference and disturbance as exact time functions.
#[derive(Clone, Copy)]
pub struct Exogenous<'a> {
    pub y_ref: &'a dyn TimeSignal,
    pub w_dist: Option<&'a dyn TimeSignal>,
}

#[derive(Clone, Copy)]
pub enum ControlLaw<'a> {
    /// `u ≡ 0`.
    Open,
    Feedforward(&'a FeedforwardLaw),
    Feedback(&'a FeedbackController),
}

#[derive(Debug, Clone, Serialize)]
pub struct Sample {
    pub t: f64,
    pub y: Vec<f64>,
    pub y_ref: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClosedLoopTrace {
    /// `‖y(nτ+·) - y_ref‖_{L²(0,τ)}` for `n = 0..N-1`.
    pub per_period_errors: Vec<f64>,
    pub fitted_rate: Option<f64>,
    #[serde(skip)]
    pub samples: Vec<Sample>,
    #[serde(skip)]
    pub final_state: DVector<f64>,
    #[serde(skip)]
    pub final_z: Option<CVector>,
}

impl ClosedLoopTrace {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(e.to_string()))?;
        let m = self.samples.first().map_or(0, |s| s.y.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=m).map(|i| format!("y{i}")));
        header.extend((1..=m).map(|i| format!("y_ref{i}")));
        w.write_record(&header).map_err(|e| Error::Config(e.to_string()))?;
        for s in &self.samples {
            let mut row = vec![s.t.to_string()];
            row.extend(s.y.iter().chain(&s.y_ref).map(f64::to_string));
            w.write_record(&row).map_err(|e| Error::Config(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn last_error(&self) -> f64 {
        self.per_period_errors.last().copied().unwrap_or(0.0)
    }
}

/// Least-squares geometric rate `exp(slope)` of `ln e_n` over `n >= skip`.
/// `None` when fewer than `min_points` positive errors remain.
pub fn fit_geometric_rate(errors: &[f64], skip: usize, min_points: usize) -> Option<f64> {
    let pts: Vec<(f64, f64)> = errors
        .iter()
        .enumerate()
        .skip(skip)
        .filter(|(_, &e)| e > 0.0 && e.is_finite())
        .map(|(n, &e)| (n as f64, e.ln()))
        .collect();
    if pts.len() < min_points.max(2) {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some((sxy / sxx).exp())
}

/// Options for [`simulate_closed_loop`].
#[derive(Debug, Clone)]
pub struct SimulationOptions {
    pub periods: usize,
    pub x0: DVector<f64>,
    pub z0: Option<CVector>,
    /// Keep every `stride`-th mesh node as a sample; `0` keeps none.
    pub sample_stride: usize,
}

impl SimulationOptions {
    pub fn new(periods: usize, states: usize) -> Self {
        Self {
            periods,
            x0: DVector::zeros(states),
            z0: None,
            sample_stride: 0,
        }
    }
}

fn controller_input(ctrl: &FeedbackController, z: &CVector) -> Result<PeriodicSignal> {
    let u = PeriodicSignal::from_coeffs(ctrl.in_basis, ctrl.gain() * z)?;
    let residue = u.symmetry_residue();
    if residue > 1e-6 {
        return Err(Error::CorruptedSignal { residue });
    }
    Ok(u)
}

/// Runs the plant over `periods` periods under the given law. Feedback
/// controllers act once per period on the projected output:
/// `u = K z_n` on `[nτ, (n+1)τ)`, `z_{n+1} = G₁z_n + G₂(ŷ_n - ŷ_ref)`.
pub fn simulate_closed_loop(
    ev: &EvolutionFamily,
    law: ControlLaw<'_>,
    signals: Exogenous<'_>,
    opts: &SimulationOptions,
) -> Result<ClosedLoopTrace> {
    let tau = ev.tau();
    let dims = ev.plant().dims();
    if opts.x0.len() != dims.states {
        return Err(Error::Dimension("initial state length differs from the plant".into()));
    }
    if signals.y_ref.dim() != dims.outputs {
        return Err(Error::Dimension("reference width differs from the plant output".into()));
    }
    let nudge = left_nudge(tau);
    let (mut z, yref_hat) = match law {
        ControlLaw::Feedback(c) => {
            let z0 = opts.z0.clone().unwrap_or_else(|| CVector::zeros(c.dim()));
            if z0.len() != c.dim() {
                return Err(Error::Dimension("controller initial state has the wrong length".into()));
            }
            (Some(z0), Some(PeriodicSignal::project(signals.y_ref, c.out_basis, DEFAULT_GRID)?))
        }
        _ => (None, None),
    };
    let out_basis: Option<SignalBasis> = match law {
        ControlLaw::Feedback(c) => Some(c.out_basis),
        _ => None,
    };
    let wb = signals.w_dist.map(SignalBatch::single);
    let mut x = DMatrix::from_column_slice(dims.states, 1, opts.x0.as_slice());
    let mut errors = Vec::with_capacity(opts.periods);
    let mut samples = Vec::new();
    for n in 0..opts.periods {
        let start = n as f64 * tau;
        let u_sig: Option<PeriodicSignal> = match law {
            ControlLaw::Open => None,
            ControlLaw::Feedforward(f) => Some(f.u_reg.clone()),
            ControlLaw::Feedback(c) => Some(controller_input(c, z.as_ref().expect("feedback state"))?),
        };
        let ub = u_sig.as_ref().map(|u| SignalBatch::single(u));
        let drive = Drive {
            input: ub.as_ref().map(|b| b as &dyn BatchSignal),
            disturbance: wb.as_ref().map(|b| b as &dyn BatchSignal),
        };
        let mut err2 = 0.0;
        let mut acc = out_basis.map(|b| CoefficientAccumulator::new(b, 1));
        let mut count = 0usize;
        let mut visit = |v: &NodeVisit<'_>| {
            let r = signals.y_ref.value(if v.left { v.t - nudge } else { v.t });
            let mut e2 = 0.0;
            for i in 0..r.len() {
                e2 += (v.output[(i, 0)] - r[i]).powi(2);
            }
            err2 += v.weight * e2;
            if let Some(a) = acc.as_mut() {
                a.add(v.t - start, v.weight, v.output);
            }
            if opts.sample_stride > 0 && !v.left {
                if count.is_multiple_of(opts.sample_stride) {
                    samples.push(Sample {
                        t: v.t,
                        y: v.output.column(0).iter().copied().collect(),
                        y_ref: r.iter().copied().collect(),
                    });
                }
                count += 1;
            }
        };
        x = ev
            .integrate(start, start + tau, x, drive, Some(&mut visit))
            .map_err(|e| match e {
                Error::IntegrationBlowup { .. } => Error::ClosedLoopBlowup { period: n },
                other => other,
            })?;
        if !err2.is_finite() {
            return Err(Error::ClosedLoopBlowup { period: n });
        }
        errors.push(err2.sqrt());
        if let (ControlLaw::Feedback(c), Some(zv), Some(a), Some(yr)) = (law, z.as_mut(), acc, yref_hat.as_ref()) {
            let yhat = a.finish().column(0).into_owned();
            let next = &c.g1 * &*zv + &c.g2 * (yhat - yr.coeffs());
            if next.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::ClosedLoopBlowup { period: n });
            }
            *zv = next;
        }
    }
    Ok(ClosedLoopTrace {
        fitted_rate: fit_geometric_rate(&errors, FIT_SKIP, FIT_MIN_POINTS),
        per_period_errors: errors,
        samples,
        final_state: x.column(0).into_owned(),
        final_z: z,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClosedLoopMethod {
    ColumnSimulation,
    BlockAssembly,
}

/// `A_e = [[Â, B̂K], [G₂Ĉ, G₁ + G₂D̂K]]` on `X ⊕ Z`, with the lifted output map
/// `C_e = [Ĉ, D̂K]`.
#[derive(Debug, Clone)]
pub struct ClosedLoopMatrix {
    pub a_e: CMatrix,
    pub c_e: CMatrix,
    pub eigenvalues: Vec<Complex64>,
    pub spectral_radius: f64,
    pub max_imag: f64,
}

impl ClosedLoopMatrix {
    fn from_parts(a_e: CMatrix, c_e: CMatrix) -> Result<Self> {
        let eigenvalues = linalg::eigenvalues(&a_e)?;
        let spectral_radius = linalg::spectral_radius(&eigenvalues);
        let max_imag = eigenvalues.iter().map(|l| l.im.abs()).fold(0.0, f64::max);
        Ok(Self {
            a_e,
            c_e,
            eigenvalues,
            spectral_radius,
            max_imag,
        })
    }
}

pub fn build_closed_loop_matrix(
    ev: &EvolutionFamily,
    ctrl: &FeedbackController,
    method: ClosedLoopMethod,
) -> Result<ClosedLoopMatrix> {
    match method {
        ClosedLoopMethod::ColumnSimulation => column_simulation(ev, ctrl),
        ClosedLoopMethod::BlockAssembly => {
            let d = ev.plant().dims();
            let bases = LiftBases {
                input: ctrl.in_basis,
                disturbance: SignalBasis::new(ev.tau(), ctrl.in_basis.order, d.disturbances)?,
                output: ctrl.out_basis,
            };
            block_assembly(&lift(ev, bases)?, ctrl)
        }
    }
}

/// Assembles `A_e` from precomputed lifted blocks.
pub fn block_assembly(sys: &LiftedSystem, ctrl: &FeedbackController) -> Result<ClosedLoopMatrix> {
    sys.bases.input.ensure_same(&ctrl.in_basis)?;
    sys.bases.output.ensure_same(&ctrl.out_basis)?;
    let k = ctrl.gain();
    let n = sys.a_hat.nrows();
    let r = ctrl.dim();
    let mut a_e = CMatrix::zeros(n + r, n + r);
    a_e.view_mut((0, 0), (n, n)).copy_from(&linalg::to_complex(&sys.a_hat));
    a_e.view_mut((0, n), (n, r)).copy_from(&(&sys.b_hat * &k));
    a_e.view_mut((n, 0), (r, n)).copy_from(&(&ctrl.g2 * &sys.c_hat));
    a_e.view_mut((n, n), (r, r)).copy_from(&(&ctrl.g1 + &ctrl.g2 * &sys.d_hat * &k));
    let mut c_e = CMatrix::zeros(sys.c_hat.nrows(), n + r);
    c_e.view_mut((0, 0), (sys.c_hat.nrows(), n)).copy_from(&sys.c_hat);
    c_e.view_mut((0, n), (sys.c_hat.nrows(), r)).copy_from(&(&sys.d_hat * &k));
    ClosedLoopMatrix::from_parts(a_e, c_e)
}

/// One closed-loop period from each unit vector of `X ⊕ Z` with zero
/// exogenous signals. Complex controller directions are run as separate real
/// and imaginary input signals.
fn column_simulation(ev: &EvolutionFamily, ctrl: &FeedbackController) -> Result<ClosedLoopMatrix> {
    let n = ev.plant().dims().states;
    let r = ctrl.dim();
    let ny = ctrl.out_basis.len();
    let mut a_e = CMatrix::zeros(n + r, n + r);
    let mut c_e = CMatrix::zeros(ny, n + r);

    let (x, y) = window_response(ev, DMatrix::identity(n, n), Drive::none(), 0, ctrl.out_basis)?;
    a_e.view_mut((0, 0), (n, n)).copy_from(&linalg::to_complex(&x));
    a_e.view_mut((n, 0), (r, n)).copy_from(&(&ctrl.g2 * &y));
    c_e.view_mut((0, 0), (ny, n)).copy_from(&y);

    let k = ctrl.gain();
    let mut parts = Vec::with_capacity(2 * r);
    for i in 0..r {
        let u = PeriodicSignal::from_coeffs(ctrl.in_basis, k.column(i).into_owned())?;
        let (re, im) = u.split_real_imag();
        parts.push(re);
        parts.push(im);
    }
    let refs: Vec<&dyn TimeSignal> = parts.iter().map(|p| p as &dyn TimeSignal).collect();
    let batch = SignalBatch::new(refs)?;
    let (x, y) = window_response(ev, DMatrix::zeros(n, 2 * r), Drive::input(&batch), 0, ctrl.out_basis)?;
    let i = Complex64::new(0.0, 1.0);
    for c in 0..r {
        let xc = CVector::from_fn(n, |row, _| Complex64::new(x[(row, 2 * c)], x[(row, 2 * c + 1)]));
        let yc = y.column(2 * c) + y.column(2 * c + 1) * i;
        a_e.view_mut((0, n + c), (n, 1)).copy_from(&xc);
        let mut zc = &ctrl.g2 * &yc;
        zc += ctrl.g1.column(c);
        a_e.view_mut((n, n + c), (r, 1)).copy_from(&zc);
        c_e.view_mut((0, n + c), (ny, 1)).copy_from(&yc);
    }
    ClosedLoopMatrix::from_parts(a_e, c_e)
}

#[derive(Debug, Clone, Serialize)]
pub struct TuningRow {
    pub epsilon: f64,
    pub spectral_radius: f64,
    pub max_imag: f64,
    pub stable: bool,
    pub admissible: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TuningReport {
    pub best: f64,
    pub best_radius: f64,
    pub table: Vec<TuningRow>,
}

impl TuningReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(e.to_string()))?;
        for row in &self.table {
            w.serialize(row).map_err(|e| Error::Config(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Picks the gain minimizing `ρ(A_e)` among stable grid points whose largest
/// `|Im λ(A_e)|` stays below `imag_cap`.
pub fn tune_epsilon(
    ev: &EvolutionFamily,
    family: &dyn Fn(f64) -> Result<FeedbackController>,
    grid: &[f64],
    imag_cap: f64,
    method: ClosedLoopMethod,
) -> Result<TuningReport> {
    if grid.is_empty() {
        return Err(Error::Config("empty epsilon grid".into()));
    }
    let lifted = match method {
        ClosedLoopMethod::BlockAssembly => {
            let c = family(grid[0])?;
            let d = ev.plant().dims();
            Some(lift(
                ev,
                LiftBases {
                    input: c.in_basis,
                    disturbance: SignalBasis::new(ev.tau(), c.in_basis.order, d.disturbances)?,
                    output: c.out_basis,
                },
            )?)
        }
        ClosedLoopMethod::ColumnSimulation => None,
    };
    let mut table = Vec::with_capacity(grid.len());
    for &eps in grid {
        let ctrl = family(eps)?;
        let m = match &lifted {
            Some(sys) => block_assembly(sys, &ctrl)?,
            None => column_simulation(ev, &ctrl)?,
        };
        let stable = m.spectral_radius < 1.0;
        table.push(TuningRow {
            epsilon: eps,
            spectral_radius: m.spectral_radius,
            max_imag: m.max_imag,
            stable,
            admissible: stable && m.max_imag <= imag_cap,
        });
    }
    let best = table
        .iter()
        .filter(|r| r.admissible)
        .min_by(|a, b| a.spectral_radius.total_cmp(&b.spectral_radius))
        .cloned();
    match best {
        Some(b) => Ok(TuningReport {
            best: b.epsilon,
            best_radius: b.spectral_radius,
            table,
        }),
        None => Err(Error::AllUnstable { table }),
    }
}

/// Log-spaced grid of `count` points on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RobustnessReport {
    pub spectral_radius: f64,
    pub stable: bool,
    /// Settled per-period error of the perturbed loop.
    pub settled_error: Option<f64>,
    /// Asymptotic error estimate from the perturbed `𝒫̃, 𝒫̃_d`.
    pub estimate: Option<f64>,
    pub relative_gap: Option<f64>,
    #[serde(skip)]
    pub trace: Option<ClosedLoopTrace>,
}

/// Keeps the controller fixed, rebuilds `A_e` on the perturbed plant and, if
/// the loop is still stable, compares the settled error with the estimate
/// recomputed from the perturbed steady-state operators.
pub fn robustness_experiment(
    perturbed: &EvolutionFamily,
    ctrl: &FeedbackController,
    signals: Exogenous<'_>,
    periods: usize,
) -> Result<RobustnessReport> {
    let m = column_simulation(perturbed, ctrl)?;
    if m.spectral_radius >= 1.0 {
        return Ok(RobustnessReport {
            spectral_radius: m.spectral_radius,
            stable: false,
            settled_error: None,
            estimate: None,
            relative_gap: None,
            trace: None,
        });
    }
    let d = perturbed.plant().dims();
    let dist_basis = SignalBasis::new(perturbed.tau(), ctrl.in_basis.order, d.disturbances)?;
    let sys = lift(
        perturbed,
        LiftBases {
            input: ctrl.in_basis,
            disturbance: dist_basis,
            output: ctrl.out_basis,
        },
    )?;
    let p = sys.steady_state_operator(Channel::Control)?;
    let pd = sys.steady_state_operator(Channel::Disturbance)?;
    let pd_w = match signals.w_dist {
        Some(w) => pd.apply(&PeriodicSignal::project(w, dist_basis, DEFAULT_GRID)?)?,
        None => PeriodicSignal::zeros(ctrl.out_basis),
    };
    let y_ref = PeriodicSignal::project(signals.y_ref, ctrl.out_basis, DEFAULT_GRID)?;
    let estimate = asymptotic_error_estimate(ctrl, &p, &pd_w, &y_ref)?.norm;
    let trace = simulate_closed_loop(
        perturbed,
        ControlLaw::Feedback(ctrl),
        signals,
        &SimulationOptions::new(periods, d.states),
    )?;
    let settled = trace.last_error();
    Ok(RobustnessReport {
        spectral_radius: m.spectral_radius,
        stable: true,
        settled_error: Some(settled),
        estimate: Some(estimate),
        relative_gap: Some((settled - estimate).abs() / estimate),
        trace: Some(trace),
    })
}
