//! JSON descriptions of plants and exogenous signals.
//!
//! A plant file names a built-in benchmark
//!
//! ```json
//! { "builtin": "heat2d", "grid": 12 }
//! ```
//!
//! or lists coefficient entries as sums of elementary terms in the reduced
//! time `s = t mod τ`:
//!
//! ```json
//! {
//!   "tau": 6.283185307179586,
//!   "dims": { "states": 1, "inputs": 1, "disturbances": 1, "outputs": 1 },
//!   "a": [ { "row": 0, "col": 0, "terms": [ { "kind": "poly", "coeffs": [-1.0] },
//!                                             { "kind": "cos", "amp": -0.5, "freq": 1.0 } ] } ],
//!   "b": [ { "row": 0, "col": 0, "terms": [ { "kind": "poly", "coeffs": [1.0] } ] } ],
//!   "bd": [ { "row": 0, "col": 0, "terms": [ { "kind": "poly", "coeffs": [1.0] } ] } ],
//!   "c": [ { "row": 0, "col": 0, "terms": [ { "kind": "poly", "coeffs": [1.0] } ] } ]
//! }
//! ```
//!
//! An entry may be restricted to `[from, to)`; entries on the same position add.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::benchmarks::{heat_plant, oscillator_plant, HEAT_GRID};
use crate::error::{Error, Result};
use crate::plant::{MatrixFn, PeriodicPlant, PlantDims};
use crate::signal::{FnSignal, TimeSignal};

/// Elementary periodic term, evaluated at the reduced time `s ∈ [0, τ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Term {
    /// `Σ c_i s^i`.
    Poly { coeffs: Vec<f64> },
    Cos {
        amp: f64,
        freq: f64,
        #[serde(default)]
        phase: f64,
    },
    Sin {
        amp: f64,
        freq: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `amp |s - center|`.
    Abs { amp: f64, center: f64 },
    /// Zero-mean triangle of amplitude `amp`, peak at `τ/2`.
    Triangle { amp: f64 },
}

impl Term {
    pub fn eval(&self, s: f64, tau: f64) -> f64 {
        match self {
            Term::Poly { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c),
            Term::Cos { amp, freq, phase } => amp * (freq * s + phase).cos(),
            Term::Sin { amp, freq, phase } => amp * (freq * s + phase).sin(),
            Term::Abs { amp, center } => amp * (s - center).abs(),
            Term::Triangle { amp } => amp * (1.0 - 2.0 * (s - tau / 2.0).abs() / (tau / 2.0)),
        }
    }

    fn kinks(&self, tau: f64) -> Vec<f64> {
        match self {
            Term::Abs { center, .. } => vec![*center],
            Term::Triangle { .. } => vec![tau / 2.0],
            _ => Vec::new(),
        }
    }
}

fn eval_terms(terms: &[Term], s: f64, tau: f64) -> f64 {
    terms.iter().map(|t| t.eval(s, tau)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntrySpec {
    pub row: usize,
    pub col: usize,
    pub terms: Vec<Term>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<f64>,
}

impl EntrySpec {
    fn active(&self, s: f64) -> bool {
        self.from.is_none_or(|f| s >= f) && self.to.is_none_or(|t| s < t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenericPlant {
    pub tau: f64,
    pub dims: PlantDims,
    #[serde(default)]
    pub breakpoints: Vec<f64>,
    #[serde(default)]
    pub a: Vec<EntrySpec>,
    #[serde(default)]
    pub b: Vec<EntrySpec>,
    #[serde(default)]
    pub bd: Vec<EntrySpec>,
    #[serde(default)]
    pub c: Vec<EntrySpec>,
    #[serde(default)]
    pub d: Vec<EntrySpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Builtin {
    Oscillators,
    Heat2d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlantConfig {
    Builtin {
        builtin: Builtin,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        grid: Option<usize>,
    },
    Generic(GenericPlant),
}

impl PlantConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn build(&self) -> Result<PeriodicPlant> {
        match self {
            PlantConfig::Builtin { builtin, grid } => match builtin {
                Builtin::Oscillators => {
                    if grid.is_some() {
                        return Err(Error::Config("the oscillator benchmark has no grid".into()));
                    }
                    Ok(oscillator_plant())
                }
                Builtin::Heat2d => heat_plant(grid.unwrap_or(HEAT_GRID)),
            },
            PlantConfig::Generic(g) => g.build(),
        }
    }
}

impl GenericPlant {
    pub fn build(&self) -> Result<PeriodicPlant> {
        let d = self.dims;
        let mut kinks = self.breakpoints.clone();
        let shapes = [
            (&self.a, d.states, d.states, "a"),
            (&self.b, d.states, d.inputs, "b"),
            (&self.bd, d.states, d.disturbances, "bd"),
            (&self.c, d.outputs, d.states, "c"),
            (&self.d, d.outputs, d.inputs, "d"),
        ];
        for (entries, rows, cols, name) in shapes {
            for e in entries.iter() {
                if e.row >= rows || e.col >= cols {
                    return Err(Error::Dimension(format!(
                        "{name} entry ({}, {}) outside a {rows}x{cols} matrix",
                        e.row, e.col
                    )));
                }
                kinks.extend(e.from.iter().chain(&e.to));
                kinks.extend(e.terms.iter().flat_map(|t| t.kinks(self.tau)));
            }
        }
        let tau = self.tau;
        let f = |entries: &[EntrySpec], rows: usize, cols: usize| -> MatrixFn {
            let entries = entries.to_vec();
            Arc::new(move |t| {
                let s = t.rem_euclid(tau);
                let mut m = DMatrix::zeros(rows, cols);
                for e in entries.iter().filter(|e| e.active(s)) {
                    m[(e.row, e.col)] += eval_terms(&e.terms, s, tau);
                }
                m
            })
        };
        PeriodicPlant::new(
            tau,
            d,
            f(&self.a, d.states, d.states),
            f(&self.b, d.states, d.inputs),
            f(&self.bd, d.states, d.disturbances),
            f(&self.c, d.outputs, d.states),
            f(&self.d, d.outputs, d.inputs),
            kinks.into_iter().filter(|&k| k > 0.0 && k < tau).collect(),
        )
    }
}

/// Vector signal: one term list per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub channels: Vec<Vec<Term>>,
}

impl SignalSpec {
    pub fn build(&self, tau: f64) -> Result<FnSignal> {
        if self.channels.is_empty() {
            return Err(Error::Config("a signal needs at least one channel".into()));
        }
        let mut kinks: Vec<f64> = self.channels.iter().flatten().flat_map(|t| t.kinks(tau)).collect();
        kinks.push(0.0);
        kinks.sort_by(f64::total_cmp);
        kinks.dedup();
        let channels = self.channels.clone();
        let dim = channels.len();
        Ok(FnSignal::new(dim, move |t| {
            let s = t.rem_euclid(tau);
            DVector::from_iterator(dim, channels.iter().map(|terms| eval_terms(terms, s, tau)))
        })
        .with_breakpoints(kinks))
    }
}

/// Reference, disturbance and the disturbance dictionary of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalsConfig {
    pub y_ref: SignalSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_dist: Option<SignalSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dictionary: Vec<SignalSpec>,
}

/// Built signals, ready for simulation.
pub struct Signals {
    pub y_ref: FnSignal,
    pub w_dist: Option<FnSignal>,
    pub dictionary: Vec<FnSignal>,
}

impl Signals {
    pub fn w_dist_ref(&self) -> Option<&dyn TimeSignal> {
        self.w_dist.as_ref().map(|w| w as &dyn TimeSignal)
    }
}

impl SignalsConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Builds the signals and checks their widths against the plant.
    pub fn build(&self, plant: &PeriodicPlant) -> Result<Signals> {
        let tau = plant.tau();
        let d = plant.dims();
        let y_ref = self.y_ref.build(tau)?;
        if y_ref.dim() != d.outputs {
            return Err(Error::Dimension(format!(
                "reference has {} channels, plant has {} outputs",
                y_ref.dim(),
                d.outputs
            )));
        }
        let mut check = |s: &SignalSpec| -> Result<FnSignal> {
            let w = s.build(tau)?;
            if w.dim() != d.disturbances {
                return Err(Error::Dimension(format!(
                    "disturbance has {} channels, plant has {}",
                    w.dim(),
                    d.disturbances
                )));
            }
            Ok(w)
        };
        let w_dist = self.w_dist.as_ref().map(&mut check).transpose()?;
        let dictionary = self.dictionary.iter().map(check).collect::<Result<_>>()?;
        Ok(Signals {
            y_ref,
            w_dist,
            dictionary,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::OscillatorCoefficients;
    use std::f64::consts::PI;

    fn entry(row: usize, col: usize, terms: Vec<Term>) -> EntrySpec {
        EntrySpec {
            row,
            col,
            terms,
            from: None,
            to: None,
        }
    }

    fn poly(c: &[f64]) -> Term {
        Term::Poly { coeffs: c.to_vec() }
    }

    /// The oscillator benchmark written out term by term.
    fn oscillators_generic() -> GenericPlant {
        GenericPlant {
            tau: 2.0 * PI,
            dims: PlantDims {
                states: 4,
                inputs: 1,
                disturbances: 2,
                outputs: 1,
            },
            breakpoints: vec![],
            a: vec![
                entry(0, 1, vec![poly(&[1.0])]),
                entry(1, 0, vec![poly(&[-1.0])]),
                entry(
                    1,
                    1,
                    vec![
                        poly(&[-1.0]),
                        Term::Cos {
                            amp: -1.0,
                            freq: 2.0,
                            phase: 0.0,
                        },
                    ],
                ),
                entry(2, 3, vec![poly(&[1.0])]),
                entry(
                    3,
                    0,
                    vec![
                        poly(&[1.0]),
                        Term::Sin {
                            amp: 0.25,
                            freq: 3.0,
                            phase: 0.0,
                        },
                    ],
                ),
                entry(3, 2, vec![poly(&[-1.0])]),
                entry(
                    3,
                    3,
                    vec![
                        poly(&[-2.0]),
                        Term::Abs {
                            amp: 1.0 / PI,
                            center: PI,
                        },
                    ],
                ),
            ],
            b: vec![entry(1, 0, vec![poly(&[1.0, 2.0, -1.0 / PI])])],
            bd: vec![entry(1, 0, vec![poly(&[1.0])]), entry(3, 1, vec![poly(&[1.0])])],
            c: vec![entry(0, 2, vec![poly(&[1.0])])],
            d: vec![],
        }
    }

    #[test]
    fn generic_oscillators_equal_the_builtin() {
        let g = oscillators_generic().build().unwrap();
        let b = crate::benchmarks::oscillator_plant_with(OscillatorCoefficients::default());
        assert_eq!(g.breakpoints(), &[PI]);
        for k in 0..50 {
            let t = k as f64 * 0.13;
            assert!((g.a(t) - b.a(t)).norm() < 1e-12, "t = {t}");
            assert!((g.b(t) - b.b(t)).norm() < 1e-12);
            assert_eq!(g.bd(t), b.bd(t));
            assert_eq!(g.c(t), b.c(t));
        }
    }

    #[test]
    fn json_round_trip_and_builtins() {
        let cfg = PlantConfig::Generic(oscillators_generic());
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(PlantConfig::from_json_str(&s).unwrap(), cfg);
        let heat = PlantConfig::from_json_str(r#"{"builtin": "heat2d", "grid": 4}"#).unwrap();
        assert_eq!(heat.build().unwrap().dims().states, 20);
        let osc = PlantConfig::from_json_str(r#"{"builtin": "oscillators"}"#).unwrap();
        assert_eq!(osc.build().unwrap().dims().states, 4);
        assert!(PlantConfig::from_json_str(r#"{"builtin": "pendulum"}"#).is_err());
    }

    #[test]
    fn windows_and_bad_entries() {
        let mut g = GenericPlant {
            tau: 2.0,
            dims: PlantDims {
                states: 1,
                inputs: 1,
                disturbances: 1,
                outputs: 1,
            },
            breakpoints: vec![],
            a: vec![EntrySpec {
                from: Some(1.0),
                ..entry(0, 0, vec![poly(&[-3.0])])
            }],
            b: vec![],
            bd: vec![],
            c: vec![entry(0, 0, vec![poly(&[1.0])])],
            d: vec![],
        };
        let p = g.build().unwrap();
        assert_eq!(p.breakpoints(), &[1.0]);
        assert_eq!(p.a(0.5)[(0, 0)], 0.0);
        assert_eq!(p.a(1.5)[(0, 0)], -3.0);
        assert_eq!(p.a(3.5)[(0, 0)], -3.0);
        g.c.push(entry(1, 0, vec![poly(&[1.0])]));
        assert!(matches!(g.build(), Err(Error::Dimension(_))));
    }

    #[test]
    fn signal_specs_build_and_check_widths() {
        let cfg = SignalsConfig::from_json_str(
            r#"{
                "y_ref": {"channels": [[{"kind": "triangle", "amp": 1.0}]]},
                "w_dist": {"channels": [[{"kind": "sin", "amp": 0.3, "freq": 1.0}], [{"kind": "poly", "coeffs": [0.2]}]]}
            }"#,
        )
        .unwrap();
        let osc = oscillator_plant();
        let s = cfg.build(&osc).unwrap();
        assert_eq!(s.y_ref.value(PI)[0], 1.0);
        assert_eq!(s.y_ref.breakpoints(), vec![0.0, PI]);
        let w = s.w_dist.unwrap().value(PI / 2.0);
        assert!((w[0] - 0.3).abs() < 1e-15 && w[1] == 0.2);
        let heat = heat_plant(3).unwrap();
        assert!(matches!(cfg.build(&heat), Err(Error::Dimension(_))));
    }
}
