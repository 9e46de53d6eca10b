//! τ-periodic linear plants `ẋ = A(t)x + B(t)u + B_d(t)w`, `y = C(t)x + D(t)u`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::signal::period_knots;

pub type MatrixFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PlantDims {
    pub states: usize,
    pub inputs: usize,
    pub disturbances: usize,
    pub outputs: usize,
}

/// Selects one of the five coefficient functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Coefficient {
    A,
    B,
    Bd,
    C,
    D,
}

/// Coefficient values on a constant piece `[start, end)` of the period.
#[derive(Debug, Clone)]
pub struct ConstantPiece {
    pub start: f64,
    pub end: f64,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl ConstantPiece {
    fn get(&self, which: Coefficient) -> &DMatrix<f64> {
        match which {
            Coefficient::A => &self.a,
            Coefficient::B => &self.b,
            Coefficient::Bd => &self.bd,
            Coefficient::C => &self.c,
            Coefficient::D => &self.d,
        }
    }

    fn get_mut(&mut self, which: Coefficient) -> &mut DMatrix<f64> {
        match which {
            Coefficient::A => &mut self.a,
            Coefficient::B => &mut self.b,
            Coefficient::Bd => &mut self.bd,
            Coefficient::C => &mut self.c,
            Coefficient::D => &mut self.d,
        }
    }
}

/// A τ-periodic plant. Evaluators receive times already reduced to `[0, τ)`
/// and are treated as right-continuous at breakpoints.
#[derive(Clone)]
pub struct PeriodicPlant {
    tau: f64,
    dims: PlantDims,
    coeffs: [MatrixFn; 5],
    breakpoints: Vec<f64>,
    pieces: Option<Arc<Vec<ConstantPiece>>>,
}

impl fmt::Debug for PeriodicPlant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeriodicPlant")
            .field("tau", &self.tau)
            .field("dims", &self.dims)
            .field("breakpoints", &self.breakpoints)
            .field("piecewise_constant", &self.pieces.is_some())
            .finish()
    }
}

fn index(which: Coefficient) -> usize {
    match which {
        Coefficient::A => 0,
        Coefficient::B => 1,
        Coefficient::Bd => 2,
        Coefficient::C => 3,
        Coefficient::D => 4,
    }
}

impl PeriodicPlant {
    /// Builds a plant from evaluator functions and checks shapes and
    /// finiteness on a sample of times.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        tau: f64,
        dims: PlantDims,
        a: MatrixFn,
        b: MatrixFn,
        bd: MatrixFn,
        c: MatrixFn,
        d: MatrixFn,
        breakpoints: Vec<f64>,
    ) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("period must be positive, got {tau}")));
        }
        if dims.states == 0 {
            return Err(Error::Config("plant needs at least one state".into()));
        }
        let mut breakpoints: Vec<f64> = period_knots(tau, &breakpoints)
            .into_iter()
            .filter(|&k| k > 0.0 && k < tau)
            .collect();
        breakpoints.dedup();
        let plant = Self {
            tau,
            dims,
            coeffs: [a, b, bd, c, d],
            breakpoints,
            pieces: None,
        };
        plant.validate(33)?;
        Ok(plant)
    }

    /// A plant whose coefficients are constant on each piece. The pieces must
    /// tile `[0, τ)` in order.
    pub fn piecewise_constant(tau: f64, pieces: Vec<ConstantPiece>) -> Result<Self> {
        let first = pieces
            .first()
            .ok_or_else(|| Error::Config("at least one constant piece is required".into()))?;
        let dims = PlantDims {
            states: first.a.nrows(),
            inputs: first.b.ncols(),
            disturbances: first.bd.ncols(),
            outputs: first.c.nrows(),
        };
        let tol = 1e-12 * tau;
        let mut expected = 0.0;
        for p in &pieces {
            if (p.start - expected).abs() > tol || p.end <= p.start {
                return Err(Error::Config("constant pieces must tile [0, tau) in order".into()));
            }
            expected = p.end;
        }
        if (expected - tau).abs() > tol {
            return Err(Error::Config("constant pieces must end at tau".into()));
        }
        let pieces = Arc::new(pieces);
        let breakpoints: Vec<f64> = pieces.iter().skip(1).map(|p| p.start).collect();
        let make = |which: Coefficient| -> MatrixFn {
            let pieces = Arc::clone(&pieces);
            Arc::new(move |t| piece_at(&pieces, t).get(which).clone())
        };
        let mut plant = Self::new(
            tau,
            dims,
            make(Coefficient::A),
            make(Coefficient::B),
            make(Coefficient::Bd),
            make(Coefficient::C),
            make(Coefficient::D),
            breakpoints,
        )?;
        plant.pieces = Some(pieces);
        Ok(plant)
    }

    /// Time-invariant plant regarded as τ-periodic.
    pub fn time_invariant(
        tau: f64,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        bd: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        Self::piecewise_constant(
            tau,
            vec![ConstantPiece {
                start: 0.0,
                end: tau,
                a,
                b,
                bd,
                c,
                d,
            }],
        )
    }

    fn validate(&self, samples: usize) -> Result<()> {
        let d = self.dims;
        let shapes = [
            (d.states, d.states),
            (d.states, d.inputs),
            (d.states, d.disturbances),
            (d.outputs, d.states),
            (d.outputs, d.inputs),
        ];
        let names = ["A", "B", "Bd", "C", "D"];
        for i in 0..samples {
            let t = self.tau * (i as f64 + 0.37) / samples as f64;
            for (k, f) in self.coeffs.iter().enumerate() {
                let m = f(t);
                if m.shape() != shapes[k] {
                    return Err(Error::Dimension(format!(
                        "{} has shape {:?}, expected {:?}",
                        names[k],
                        m.shape(),
                        shapes[k]
                    )));
                }
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config(format!("{} is not finite at t = {t}", names[k])));
                }
            }
        }
        Ok(())
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dims(&self) -> PlantDims {
        self.dims
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn pieces(&self) -> Option<&[ConstantPiece]> {
        self.pieces.as_deref().map(Vec::as_slice)
    }

    fn reduce(&self, t: f64) -> f64 {
        let r = t.rem_euclid(self.tau);
        if r >= self.tau {
            0.0
        } else {
            r
        }
    }

    pub fn coefficient(&self, which: Coefficient, t: f64) -> DMatrix<f64> {
        (self.coeffs[index(which)])(self.reduce(t))
    }

    pub fn a(&self, t: f64) -> DMatrix<f64> {
        self.coefficient(Coefficient::A, t)
    }

    pub fn b(&self, t: f64) -> DMatrix<f64> {
        self.coefficient(Coefficient::B, t)
    }

    pub fn bd(&self, t: f64) -> DMatrix<f64> {
        self.coefficient(Coefficient::Bd, t)
    }

    pub fn c(&self, t: f64) -> DMatrix<f64> {
        self.coefficient(Coefficient::C, t)
    }

    pub fn d(&self, t: f64) -> DMatrix<f64> {
        self.coefficient(Coefficient::D, t)
    }

    /// Index of the constant piece containing `t` (reduced modulo τ).
    pub(crate) fn piece_index(&self, t: f64) -> Option<usize> {
        let pieces = self.pieces.as_ref()?;
        let r = self.reduce(t);
        Some(pieces.iter().position(|p| r < p.end).unwrap_or(pieces.len() - 1))
    }

    /// Largest deviation between evaluations at `t` and `t + τ` over a sample.
    pub fn periodicity_defect(&self, samples: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..samples {
            let t = self.tau * (i as f64 + 0.5) / samples as f64;
            for which in [Coefficient::A, Coefficient::B, Coefficient::Bd, Coefficient::C, Coefficient::D] {
                let d = self.coefficient(which, t) - self.coefficient(which, t + self.tau);
                worst = worst.max(d.amax());
            }
        }
        worst
    }

    /// Returns the perturbed plant `(Ã, B̃, B̃_d, C̃, D̃)`.
    pub fn perturbed(&self, perturbation: &Perturbation) -> Result<Self> {
        let mut out = self.clone();
        match perturbation {
            Perturbation::Scale { which, factor } => {
                let f = Arc::clone(&self.coeffs[index(*which)]);
                let factor = *factor;
                out.coeffs[index(*which)] = Arc::new(move |t| f(t) * factor);
                if let Some(pieces) = &self.pieces {
                    let mut p = (**pieces).clone();
                    for piece in &mut p {
                        *piece.get_mut(*which) *= factor;
                    }
                    out.pieces = Some(Arc::new(p));
                }
            }
            Perturbation::ScaleEntry {
                which,
                row,
                col,
                factor,
            } => {
                let probe = self.coefficient(*which, 0.0);
                if *row >= probe.nrows() || *col >= probe.ncols() {
                    return Err(Error::Dimension(format!(
                        "entry ({row}, {col}) outside a {:?} matrix",
                        probe.shape()
                    )));
                }
                let f = Arc::clone(&self.coeffs[index(*which)]);
                let (r, c, factor) = (*row, *col, *factor);
                out.coeffs[index(*which)] = Arc::new(move |t| {
                    let mut m = f(t);
                    m[(r, c)] *= factor;
                    m
                });
                if let Some(pieces) = &self.pieces {
                    let mut p = (**pieces).clone();
                    for piece in &mut p {
                        piece.get_mut(*which)[(r, c)] *= factor;
                    }
                    out.pieces = Some(Arc::new(p));
                }
            }
            Perturbation::Add { which, delta } => {
                let f = Arc::clone(&self.coeffs[index(*which)]);
                let g = Arc::clone(delta);
                out.coeffs[index(*which)] = Arc::new(move |t| f(t) + g(t));
                out.pieces = None;
            }
        }
        out.validate(17)?;
        Ok(out)
    }
}

fn piece_at(pieces: &[ConstantPiece], t: f64) -> &ConstantPiece {
    pieces.iter().find(|p| t < p.end).unwrap_or(&pieces[pieces.len() - 1])
}

/// Multiplicative or additive change of one coefficient function.
#[derive(Clone)]
pub enum Perturbation {
    Scale {
        which: Coefficient,
        factor: f64,
    },
    ScaleEntry {
        which: Coefficient,
        row: usize,
        col: usize,
        factor: f64,
    },
    Add {
        which: Coefficient,
        delta: MatrixFn,
    },
}

impl fmt::Debug for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Perturbation::Scale { which, factor } => write!(f, "Scale({which:?} x {factor})"),
            Perturbation::ScaleEntry {
                which,
                row,
                col,
                factor,
            } => write!(f, "ScaleEntry({which:?}[{row},{col}] x {factor})"),
            Perturbation::Add { which, .. } => write!(f, "Add({which:?} + delta(t))"),
        }
    }
}

/// Wraps a constant matrix as an evaluator.
pub fn constant(m: DMatrix<f64>) -> MatrixFn {
    Arc::new(move |_| m.clone())
}
