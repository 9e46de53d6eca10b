//! Approximating `𝒫` and `𝒫_d w` from output measurements of the running
//! plant, taken on the window `[nτ, (n+1)τ)` once transients have settled.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::evolution::{Drive, EvolutionFamily};
use crate::lifting::{window_response, Channel, LiftedSteadyStateOperator, OperatorSource};
use crate::linalg::{CMatrix, CVector};
use crate::signal::{BatchSignal, PeriodicSignal, RealProbes, SignalBasis, SignalBatch, TimeSignal};

#[derive(Debug, Clone)]
pub struct IdentificationConfig {
    /// Measurement window is `[nτ, (n+1)τ)` with `n = settle_periods`.
    pub settle_periods: usize,
    /// Truncation order `K` of the input and output bases.
    pub order: usize,
    /// Initial state of every probing run; zero when absent.
    pub initial_state: Option<DVector<f64>>,
}

impl IdentificationConfig {
    pub fn new(settle_periods: usize, order: usize) -> Result<Self> {
        if settle_periods == 0 {
            return Err(Error::Config("settle_periods must be at least 1".into()));
        }
        Ok(Self {
            settle_periods,
            order,
            initial_state: None,
        })
    }

    pub fn with_initial_state(mut self, x0: DVector<f64>) -> Self {
        self.initial_state = Some(x0);
        self
    }

    fn validate(&self, ev: &EvolutionFamily) -> Result<()> {
        if self.settle_periods == 0 {
            return Err(Error::Config("settle_periods must be at least 1".into()));
        }
        if let Some(x0) = &self.initial_state {
            if x0.len() != ev.plant().dims().states {
                return Err(Error::Dimension("initial state length differs from the plant".into()));
            }
        }
        match ev.is_exponentially_stable(0.0) {
            Ok(r) if !r.stable => log::warn!(
                "identifying a plant that is not exponentially stable (spectral radius {:.4})",
                r.spectral_radius
            ),
            Err(e) => log::warn!("stability check failed before identification: {e}"),
            _ => {}
        }
        Ok(())
    }

    fn initial_states(&self, states: usize, columns: usize) -> DMatrix<f64> {
        match &self.initial_state {
            Some(x0) => DMatrix::from_fn(states, columns, |r, _| x0[r]),
            None => DMatrix::zeros(states, columns),
        }
    }
}

/// Runs a batch of probing columns, locating the first divergent column if
/// the batch blows up.
fn run_columns(
    ev: &EvolutionFamily,
    cfg: &IdentificationConfig,
    drive: Drive<'_>,
    columns: usize,
    out_basis: SignalBasis,
) -> Result<CMatrix> {
    let x0 = cfg.initial_states(ev.plant().dims().states, columns);
    match window_response(ev, x0, drive, cfg.settle_periods, out_basis) {
        Ok((_, y)) => Ok(y),
        Err(Error::IntegrationBlowup { time }) => {
            let column = (0..columns)
                .find(|&c| {
                    let single = ColumnOf { batch: drive, column: c };
                    let d = Drive {
                        input: drive.input.map(|_| &single as &dyn BatchSignal),
                        disturbance: drive.disturbance.map(|_| &single as &dyn BatchSignal),
                    };
                    let x = cfg.initial_states(ev.plant().dims().states, 1);
                    window_response(ev, x, d, cfg.settle_periods, out_basis).is_err()
                })
                .unwrap_or(0);
            Err(Error::IdentificationBlowup { column, time })
        }
        Err(e) => Err(e),
    }
}

/// One column of whichever batch in a drive is present.
struct ColumnOf<'a> {
    batch: Drive<'a>,
    column: usize,
}

impl BatchSignal for ColumnOf<'_> {
    fn channels(&self) -> usize {
        self.inner().channels()
    }

    fn columns(&self) -> usize {
        1
    }

    fn eval(&self, t: f64) -> DMatrix<f64> {
        self.inner().eval(t).columns(self.column, 1).into_owned()
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.inner().breakpoints()
    }
}

impl ColumnOf<'_> {
    fn inner(&self) -> &dyn BatchSignal {
        self.batch.input.or(self.batch.disturbance).expect("drive has a batch")
    }
}

/// Measured `𝒫`: the settled output response to every basis function of the
/// input space, projected onto the output basis.
pub fn measure_p(ev: &EvolutionFamily, cfg: &IdentificationConfig) -> Result<LiftedSteadyStateOperator> {
    measure_operator(ev, cfg, Channel::Control)
}

/// Measured steady-state operator of either input channel.
pub fn measure_operator(
    ev: &EvolutionFamily,
    cfg: &IdentificationConfig,
    which: Channel,
) -> Result<LiftedSteadyStateOperator> {
    cfg.validate(ev)?;
    let d = ev.plant().dims();
    let channels = match which {
        Channel::Control => d.inputs,
        Channel::Disturbance => d.disturbances,
    };
    let in_basis = SignalBasis::new(ev.tau(), cfg.order, channels)?;
    let out_basis = SignalBasis::new(ev.tau(), cfg.order, d.outputs)?;
    let probes = RealProbes::new(in_basis);
    let drive = match which {
        Channel::Control => Drive::input(&probes),
        Channel::Disturbance => Drive::disturbance(&probes),
    };
    let y = run_columns(ev, cfg, drive, probes.columns(), out_basis)?;
    LiftedSteadyStateOperator::new(in_basis, out_basis, probes.to_basis_columns(&y), OperatorSource::Measured)
}

/// Measured `𝒫_d w` for each periodic disturbance profile `w`.
pub fn measure_pd_ws(ev: &EvolutionFamily, ws: &[&dyn TimeSignal], cfg: &IdentificationConfig) -> Result<Vec<PeriodicSignal>> {
    cfg.validate(ev)?;
    if ws.is_empty() {
        return Ok(Vec::new());
    }
    let d = ev.plant().dims();
    let out_basis = SignalBasis::new(ev.tau(), cfg.order, d.outputs)?;
    let batch = SignalBatch::new(ws.to_vec())?;
    if batch.channels() != d.disturbances {
        return Err(Error::Dimension(format!(
            "disturbance profiles have {} channels, plant has {}",
            batch.channels(),
            d.disturbances
        )));
    }
    let y = run_columns(ev, cfg, Drive::disturbance(&batch), ws.len(), out_basis)?;
    (0..ws.len())
        .map(|c| PeriodicSignal::from_coeffs(out_basis, y.column(c).into_owned()))
        .collect()
}

pub fn measure_pd_w(ev: &EvolutionFamily, w: &dyn TimeSignal, cfg: &IdentificationConfig) -> Result<PeriodicSignal> {
    Ok(measure_pd_ws(ev, &[w], cfg)?.remove(0))
}

/// A recorded output trace: sample times and one output vector per sample.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub t: Vec<f64>,
    pub y: Vec<DVector<f64>>,
}

impl Trace {
    /// Reads a CSV file with a header row and columns `t, y_1, ..., y_m`.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Config(e.to_string()))?;
        let mut trace = Trace::default();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Config(e.to_string()))?;
            let vals = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Config(format!("{path:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() < 2 {
                return Err(Error::Config(format!("{path:?}: need a time column and at least one output")));
            }
            trace.t.push(vals[0]);
            trace.y.push(DVector::from_column_slice(&vals[1..]));
        }
        Ok(trace)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(e.to_string()))?;
        let m = self.y.first().map_or(0, |v| v.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=m).map(|i| format!("y{i}")));
        w.write_record(&header).map_err(|e| Error::Config(e.to_string()))?;
        for (t, y) in self.t.iter().zip(&self.y) {
            let mut row = vec![format!("{t:.17e}")];
            row.extend(y.iter().map(|v| format!("{v:.17e}")));
            w.write_record(&row).map_err(|e| Error::Config(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Trapezoid projection of the samples in `[start, start + τ]` onto `basis`.
    pub fn project_window(&self, basis: SignalBasis, start: f64) -> Result<PeriodicSignal> {
        let end = start + basis.tau;
        let tol = 1e-9 * basis.tau;
        let idx: Vec<usize> = (0..self.t.len())
            .filter(|&i| self.t[i] >= start - tol && self.t[i] <= end + tol)
            .collect();
        if idx.len() < 2 {
            return Err(Error::Config("trace does not cover the measurement window".into()));
        }
        if self.t[idx[0]] > start + 1e-6 * basis.tau || self.t[*idx.last().unwrap()] < end - 1e-6 * basis.tau {
            return Err(Error::Config("trace does not cover the measurement window".into()));
        }
        let mut coeffs = CVector::zeros(basis.len());
        let p = basis.per_channel();
        for w in idx.windows(2) {
            let (a, b) = (w[0], w[1]);
            let h = self.t[b] - self.t[a];
            for &(i, weight) in &[(a, 0.5 * h), (b, 0.5 * h)] {
                let phi = basis.functions_at((self.t[i] - start).rem_euclid(basis.tau));
                let y = &self.y[i];
                if y.len() != basis.channels {
                    return Err(Error::Dimension("trace width differs from the output basis".into()));
                }
                for c in 0..basis.channels {
                    for (j, ph) in phi.iter().enumerate() {
                        coeffs[c * p + j] += ph.conj() * (weight * y[c]);
                    }
                }
            }
        }
        PeriodicSignal::from_coeffs(basis, coeffs)
    }
}

/// Measured `𝒫` from externally recorded responses to the real probe inputs
/// `1/√τ`, `cos(mωt)/√τ`, `sin(mωt)/√τ` of each input channel, in the order
/// documented on [`RealProbes`].
pub fn operator_from_probe_traces(
    in_basis: SignalBasis,
    out_basis: SignalBasis,
    traces: &[Trace],
    settle_periods: usize,
) -> Result<LiftedSteadyStateOperator> {
    if traces.len() != in_basis.len() {
        return Err(Error::Dimension(format!(
            "{} probe traces supplied, the input basis needs {}",
            traces.len(),
            in_basis.len()
        )));
    }
    let start = settle_periods as f64 * in_basis.tau;
    let mut cols = CMatrix::zeros(out_basis.len(), traces.len());
    for (j, tr) in traces.iter().enumerate() {
        cols.set_column(j, tr.project_window(out_basis, start)?.coeffs());
    }
    let probes = RealProbes::new(in_basis);
    LiftedSteadyStateOperator::new(in_basis, out_basis, probes.to_basis_columns(&cols), OperatorSource::Measured)
}

/// Simulated output trace of a single probing run, sampled on the integrator
/// mesh. Useful for producing traces in the external format.
pub fn simulate_trace(
    ev: &EvolutionFamily,
    u: Option<&dyn TimeSignal>,
    w: Option<&dyn TimeSignal>,
    x0: &DVector<f64>,
    periods: usize,
) -> Result<Trace> {
    let ub = u.map(SignalBatch::single);
    let wb = w.map(SignalBatch::single);
    let drive = Drive {
        input: ub.as_ref().map(|b| b as &dyn BatchSignal),
        disturbance: wb.as_ref().map(|b| b as &dyn BatchSignal),
    };
    let mut trace = Trace::default();
    let mut visit = |n: &crate::evolution::NodeVisit<'_>| {
        if !n.left || trace.t.last().is_none_or(|&last| n.t > last) {
            trace.t.push(n.t);
            trace.y.push(n.output.column(0).into_owned());
        }
    };
    let x = DMatrix::from_column_slice(x0.len(), 1, x0.as_slice());
    ev.integrate(0.0, periods as f64 * ev.tau(), x, drive, Some(&mut visit))?;
    Ok(trace)
}
