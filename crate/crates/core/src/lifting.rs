//! Lifted discrete-time representation of a periodic plant and the
//! steady-state operators `𝒫 = Ĉ(I-Â)⁻¹B̂ + D̂` and `𝒫_d`.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{Drive, EvolutionFamily};
use crate::linalg::{self, CMatrix, ComplexMatrixJson};
use crate::signal::{BatchSignal, CoefficientAccumulator, PeriodicSignal, RealProbes, SignalBasis};

/// Signal bases for the input, disturbance and output spaces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftBases {
    pub input: SignalBasis,
    pub disturbance: SignalBasis,
    pub output: SignalBasis,
}

impl LiftBases {
    /// The same truncation order on every space.
    pub fn uniform(ev: &EvolutionFamily, order: usize) -> Result<Self> {
        let d = ev.plant().dims();
        let tau = ev.tau();
        Ok(Self {
            input: SignalBasis::new(tau, order, d.inputs)?,
            disturbance: SignalBasis::new(tau, order, d.disturbances)?,
            output: SignalBasis::new(tau, order, d.outputs)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Control,
    Disturbance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorSource {
    Quadrature,
    Measured,
}

/// Matrix of a steady-state operator between truncated signal spaces.
/// Entry `(l, k)` is `⟨𝒫 φ_k, ψ_l⟩`.
#[derive(Debug, Clone)]
pub struct LiftedSteadyStateOperator {
    pub in_basis: SignalBasis,
    pub out_basis: SignalBasis,
    pub matrix: CMatrix,
    pub source: OperatorSource,
    /// Condition number of `I - Â` when assembled from lifted blocks.
    pub condition: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct OperatorJson {
    source: OperatorSource,
    in_basis: SignalBasis,
    out_basis: SignalBasis,
    #[serde(default)]
    condition: Option<f64>,
    matrix: ComplexMatrixJson,
}

impl LiftedSteadyStateOperator {
    pub fn new(in_basis: SignalBasis, out_basis: SignalBasis, matrix: CMatrix, source: OperatorSource) -> Result<Self> {
        if matrix.nrows() != out_basis.len() || matrix.ncols() != in_basis.len() {
            return Err(Error::Dimension(format!(
                "operator matrix is {}x{}, bases need {}x{}",
                matrix.nrows(),
                matrix.ncols(),
                out_basis.len(),
                in_basis.len()
            )));
        }
        Ok(Self {
            in_basis,
            out_basis,
            matrix,
            source,
            condition: None,
        })
    }

    pub fn apply(&self, u: &PeriodicSignal) -> Result<PeriodicSignal> {
        self.in_basis.ensure_same(u.basis())?;
        PeriodicSignal::from_coeffs(self.out_basis, &self.matrix * u.coeffs())
    }

    /// `‖self - other‖_F / ‖other‖_F`.
    pub fn relative_difference(&self, other: &Self) -> Result<f64> {
        self.in_basis.ensure_same(&other.in_basis)?;
        self.out_basis.ensure_same(&other.out_basis)?;
        let denom = linalg::frobenius(&other.matrix);
        let num = linalg::frobenius(&(&self.matrix - &other.matrix));
        Ok(if denom == 0.0 { num } else { num / denom })
    }

    pub fn to_json_string(&self) -> Result<String> {
        let j = OperatorJson {
            source: self.source,
            in_basis: self.in_basis,
            out_basis: self.out_basis,
            condition: self.condition,
            matrix: ComplexMatrixJson::from(&self.matrix),
        };
        Ok(serde_json::to_string_pretty(&j)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let j: OperatorJson = serde_json::from_str(s)?;
        let matrix = CMatrix::try_from(&j.matrix)?;
        let mut op = Self::new(j.in_basis, j.out_basis, matrix, j.source)?;
        op.condition = j.condition;
        Ok(op)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

/// Blocks of the lifted system
/// `x̂_{n+1} = Â x̂_n + B̂ û_n + B̂_d ŵ_n`, `ŷ_n = Ĉ x̂_n + D̂ û_n + D̂_d ŵ_n`.
#[derive(Debug, Clone)]
pub struct LiftedSystem {
    pub bases: LiftBases,
    pub a_hat: DMatrix<f64>,
    pub b_hat: CMatrix,
    pub bd_hat: CMatrix,
    pub c_hat: CMatrix,
    pub d_hat: CMatrix,
    pub dd_hat: CMatrix,
}

/// Integrates the columns of `x0` over `[0, (n+1)τ]` and projects the output
/// on the window `[nτ, (n+1)τ]` onto `out_basis`. Returns the final state and
/// the output coefficients, one column per state column.
pub(crate) fn window_response(
    ev: &EvolutionFamily,
    x0: DMatrix<f64>,
    drive: Drive<'_>,
    settle_periods: usize,
    out_basis: SignalBasis,
) -> Result<(DMatrix<f64>, CMatrix)> {
    let tau = ev.tau();
    let start = settle_periods as f64 * tau;
    let end = start + tau;
    let tol = 1e-9 * ev.step();
    let mut acc = CoefficientAccumulator::new(out_basis, x0.ncols());
    let mut visit = |n: &crate::evolution::NodeVisit<'_>| {
        if n.t > start + tol || (n.t >= start - tol && !n.left) {
            acc.add(n.t - start, n.weight, n.output);
        }
    };
    let x = ev.integrate(0.0, end, x0, drive, Some(&mut visit))?;
    Ok((x, acc.finish()))
}

/// Computes every lifted block by integrating over one period: the probes of
/// each basis for `B̂, D̂` and `B̂_d, D̂_d`, the identity for `Ĉ`.
pub fn lift(ev: &EvolutionFamily, bases: LiftBases) -> Result<LiftedSystem> {
    let dims = ev.plant().dims();
    let tau = ev.tau();
    for (b, ch, name) in [
        (bases.input, dims.inputs, "input"),
        (bases.disturbance, dims.disturbances, "disturbance"),
        (bases.output, dims.outputs, "output"),
    ] {
        if (b.tau - tau).abs() > 1e-12 * tau || b.channels != ch {
            return Err(Error::Dimension(format!("{name} basis does not match the plant")));
        }
    }
    let a_hat = ev.monodromy()?.clone();
    let n = dims.states;

    let (b_hat, d_hat) = probe_blocks(ev, bases.input, bases.output, Channel::Control)?;
    let (bd_hat, dd_hat) = probe_blocks(ev, bases.disturbance, bases.output, Channel::Disturbance)?;
    let (_, c_hat) = window_response(ev, DMatrix::identity(n, n), Drive::none(), 0, bases.output)?;

    Ok(LiftedSystem {
        bases,
        a_hat,
        b_hat,
        bd_hat,
        c_hat,
        d_hat,
        dd_hat,
    })
}

fn probe_blocks(
    ev: &EvolutionFamily,
    in_basis: SignalBasis,
    out_basis: SignalBasis,
    channel: Channel,
) -> Result<(CMatrix, CMatrix)> {
    let probes = RealProbes::new(in_basis);
    let drive = match channel {
        Channel::Control => Drive::input(&probes),
        Channel::Disturbance => Drive::disturbance(&probes),
    };
    let x0 = DMatrix::zeros(ev.plant().dims().states, probes.columns());
    let (x, y) = window_response(ev, x0, drive, 0, out_basis)?;
    let state = probes.to_basis_columns(&linalg::to_complex(&x));
    let out = probes.to_basis_columns(&y);
    Ok((state, out))
}

impl LiftedSystem {
    /// `P̂(1) = Ĉ(I-Â)⁻¹B̂ + D̂`, or the disturbance analog.
    pub fn steady_state_operator(&self, which: Channel) -> Result<LiftedSteadyStateOperator> {
        let n = self.a_hat.nrows();
        let i_minus_a = linalg::identity(n) - linalg::to_complex(&self.a_hat);
        let (b, d, in_basis) = match which {
            Channel::Control => (&self.b_hat, &self.d_hat, self.bases.input),
            Channel::Disturbance => (&self.bd_hat, &self.dd_hat, self.bases.disturbance),
        };
        let (x, cond) = linalg::solve(&i_minus_a, b)?;
        let matrix = &self.c_hat * x + d;
        let mut op = LiftedSteadyStateOperator::new(in_basis, self.bases.output, matrix, OperatorSource::Quadrature)?;
        op.condition = Some(cond);
        Ok(op)
    }
}
