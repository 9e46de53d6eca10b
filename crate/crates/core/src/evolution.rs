//! Evolution family of a periodic plant: fixed-step RK4 propagation,
//! monodromy matrix and the spectral stability test.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg;
use crate::plant::PeriodicPlant;
use crate::signal::{left_nudge, period_knots, segment_steps, BatchSignal, SignalBatch, TimeSignal};

pub const DEFAULT_STEPS_PER_PERIOD: usize = 4096;

/// Exogenous inputs for a batched integration. Missing entries are zero.
#[derive(Clone, Copy, Default)]
pub struct Drive<'a> {
    pub input: Option<&'a dyn BatchSignal>,
    pub disturbance: Option<&'a dyn BatchSignal>,
}

impl<'a> Drive<'a> {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn input(u: &'a dyn BatchSignal) -> Self {
        Self {
            input: Some(u),
            disturbance: None,
        }
    }

    pub fn disturbance(w: &'a dyn BatchSignal) -> Self {
        Self {
            input: None,
            disturbance: Some(w),
        }
    }
}

/// State and output at one mesh node, with its trapezoid weight. Nodes on a
/// segment boundary are reported twice: once as a left limit and once as the
/// right value.
pub struct NodeVisit<'a> {
    pub t: f64,
    pub weight: f64,
    pub left: bool,
    pub state: &'a DMatrix<f64>,
    pub output: &'a DMatrix<f64>,
}

/// One RK4 step of `ẋ = Ax + f` with constant `A`, written as
/// `x⁺ = R x + P₀ f(t) + P_h f(t + h/2) + P₁ f(t + h)`. The forcing maps are
/// stored pre-multiplied by `B` and `B_d`.
struct StepMaps {
    r: DMatrix<f64>,
    p0_b: DMatrix<f64>,
    ph_b: DMatrix<f64>,
    p1_b: DMatrix<f64>,
    p0_bd: DMatrix<f64>,
    ph_bd: DMatrix<f64>,
    p1_bd: DMatrix<f64>,
}

impl StepMaps {
    fn new(a: &DMatrix<f64>, b: &DMatrix<f64>, bd: &DMatrix<f64>, h: f64) -> Self {
        let n = a.nrows();
        let i = DMatrix::<f64>::identity(n, n);
        let ha = a * h;
        let ha2 = &ha * &ha;
        let ha3 = &ha2 * &ha;
        let ha4 = &ha3 * &ha;
        let r = &i + &ha + &ha2 * 0.5 + &ha3 * (1.0 / 6.0) + &ha4 * (1.0 / 24.0);
        let p0 = (&i + &ha + &ha2 * 0.5 + &ha3 * 0.25) * (h / 6.0);
        let ph = (&i * 4.0 + &ha * 2.0 + &ha2 * 0.5) * (h / 6.0);
        let p1 = h / 6.0;
        Self {
            r,
            p0_b: &p0 * b,
            ph_b: &ph * b,
            p1_b: b * p1,
            p0_bd: &p0 * bd,
            ph_bd: &ph * bd,
            p1_bd: bd * p1,
        }
    }
}

/// Spectral stability verdict for the monodromy matrix.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub stable: bool,
    pub spectral_radius: f64,
    pub eigenvalues: Vec<Complex64>,
}

/// `U_A(t, s)` of a periodic plant, realized by classical RK4 on a mesh that
/// is split at every breakpoint.
pub struct EvolutionFamily {
    plant: PeriodicPlant,
    step: f64,
    monodromy: OnceLock<DMatrix<f64>>,
    step_maps: Mutex<HashMap<(usize, u64), Arc<StepMaps>>>,
}

impl std::fmt::Debug for EvolutionFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EvolutionFamily")
            .field("plant", &self.plant)
            .field("step", &self.step)
            .finish()
    }
}

impl EvolutionFamily {
    pub fn new(plant: PeriodicPlant) -> Self {
        let step = plant.tau() / DEFAULT_STEPS_PER_PERIOD as f64;
        Self::with_step(plant, step)
    }

    pub fn with_step(plant: PeriodicPlant, step: f64) -> Self {
        assert!(step > 0.0 && step.is_finite(), "integrator step must be positive");
        Self {
            plant,
            step,
            monodromy: OnceLock::new(),
            step_maps: Mutex::new(HashMap::new()),
        }
    }

    pub fn plant(&self) -> &PeriodicPlant {
        &self.plant
    }

    pub fn tau(&self) -> f64 {
        self.plant.tau()
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    fn maps_for(&self, piece: usize, h: f64) -> Arc<StepMaps> {
        let key = (piece, h.to_bits());
        let mut cache = self.step_maps.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(m) = cache.get(&key) {
            return Arc::clone(m);
        }
        let p = &self.plant.pieces().expect("piecewise plant")[piece];
        let maps = Arc::new(StepMaps::new(&p.a, &p.b, &p.bd, h));
        cache.insert(key, Arc::clone(&maps));
        maps
    }

    /// Mesh segments `(start, end, steps)` covering `[s, t]`.
    fn segments(&self, s: f64, t: f64, extra_knots: &[f64]) -> Vec<(f64, f64, usize)> {
        let tau = self.tau();
        let mut bps: Vec<f64> = self.plant.breakpoints().to_vec();
        bps.extend_from_slice(extra_knots);
        let knots = period_knots(tau, &bps);
        let tol = 1e-12 * tau.max(t.abs());
        let mut points = vec![s];
        let first_period = (s / tau).floor() as i64;
        let last_period = (t / tau).ceil() as i64;
        for p in first_period..=last_period {
            for &k in &knots[..knots.len() - 1] {
                let x = p as f64 * tau + k;
                if x > s + tol && x < t - tol {
                    points.push(x);
                }
            }
        }
        points.push(t);
        points.sort_by(f64::total_cmp);
        points
            .windows(2)
            .map(|w| (w[0], w[1], segment_steps(w[1] - w[0], self.step)))
            .collect()
    }

    /// Integrates the columns of `x0` from `s` to `t` under `drive`, calling
    /// `visit` at every mesh node. Returns the state at `t`.
    pub fn integrate(
        &self,
        s: f64,
        t: f64,
        x0: DMatrix<f64>,
        drive: Drive<'_>,
        mut visit: Option<&mut dyn FnMut(&NodeVisit<'_>)>,
    ) -> Result<DMatrix<f64>> {
        let dims = self.plant.dims();
        if x0.nrows() != dims.states {
            return Err(Error::Dimension(format!(
                "initial state has {} rows, plant has {} states",
                x0.nrows(),
                dims.states
            )));
        }
        if t < s {
            return Err(Error::Dimension(format!("cannot integrate backwards from {s} to {t}")));
        }
        let cols = x0.ncols();
        for (sig, channels, name) in [
            (drive.input, dims.inputs, "input"),
            (drive.disturbance, dims.disturbances, "disturbance"),
        ] {
            if let Some(sig) = sig {
                if sig.channels() != channels || sig.columns() != cols {
                    return Err(Error::Dimension(format!(
                        "{name} batch is {}x{}, expected {}x{}",
                        sig.channels(),
                        sig.columns(),
                        channels,
                        cols
                    )));
                }
            }
        }
        let tau = self.tau();
        if t - s <= 1e-14 * tau {
            return Ok(x0);
        }
        let mut extra = Vec::new();
        if let Some(u) = drive.input {
            extra.extend(u.breakpoints());
        }
        if let Some(w) = drive.disturbance {
            extra.extend(w.breakpoints());
        }
        let nudge = left_nudge(tau);
        let eval_u = |t: f64| drive.input.map(|u| u.eval(t));
        let eval_w = |t: f64| drive.disturbance.map(|w| w.eval(t));

        let mut x = x0;
        for (a, b, steps) in self.segments(s, t, &extra) {
            let h = (b - a) / steps as f64;
            let piece = self.plant.piece_index(0.5 * (a + b));
            let maps = piece.map(|p| self.maps_for(p, h));

            let mut u0 = eval_u(a);
            let mut w0 = eval_w(a);
            if let Some(v) = visit.as_deref_mut() {
                let y = self.output_at(a, &x, u0.as_ref());
                v(&NodeVisit {
                    t: a,
                    weight: 0.5 * h,
                    left: false,
                    state: &x,
                    output: &y,
                });
            }
            let mut a0 = if maps.is_none() { Some(self.plant.a(a)) } else { None };
            for j in 0..steps {
                let last = j + 1 == steps;
                let t0 = a + j as f64 * h;
                let t1 = if last { b } else { a + (j + 1) as f64 * h };
                let th = 0.5 * (t0 + t1);
                let t1e = t1 - nudge;
                let uh = eval_u(th);
                let wh = eval_w(th);
                let u1 = eval_u(t1e);
                let w1 = eval_w(t1e);
                match &maps {
                    Some(m) => {
                        let mut next = &m.r * &x;
                        for (p, val) in [(&m.p0_b, &u0), (&m.ph_b, &uh), (&m.p1_b, &u1)] {
                            if let Some(v) = val {
                                next += p * v;
                            }
                        }
                        for (p, val) in [(&m.p0_bd, &w0), (&m.ph_bd, &wh), (&m.p1_bd, &w1)] {
                            if let Some(v) = val {
                                next += p * v;
                            }
                        }
                        x = next;
                    }
                    None => {
                        let am = self.plant.a(th);
                        let a1 = self.plant.a(t1e);
                        let f0 = self.forcing(t0, u0.as_ref(), w0.as_ref());
                        let fh = self.forcing(th, uh.as_ref(), wh.as_ref());
                        let f1 = self.forcing(t1e, u1.as_ref(), w1.as_ref());
                        let a0m = a0.take().unwrap_or_else(|| self.plant.a(t0));
                        let mut k1 = &a0m * &x;
                        add_opt(&mut k1, &f0);
                        let mut k2 = &am * (&x + &k1 * (0.5 * h));
                        add_opt(&mut k2, &fh);
                        let mut k3 = &am * (&x + &k2 * (0.5 * h));
                        add_opt(&mut k3, &fh);
                        let mut k4 = &a1 * (&x + &k3 * h);
                        add_opt(&mut k4, &f1);
                        x += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
                        a0 = Some(a1);
                    }
                }
                if (last || j % 256 == 255) && x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::IntegrationBlowup { time: t1 });
                }
                if let Some(v) = visit.as_deref_mut() {
                    let y = self.output_at(if last { t1e } else { t1 }, &x, u1.as_ref());
                    v(&NodeVisit {
                        t: t1,
                        weight: if last { 0.5 * h } else { h },
                        left: last,
                        state: &x,
                        output: &y,
                    });
                }
                u0 = u1;
                w0 = w1;
            }
        }
        Ok(x)
    }

    fn forcing(&self, t: f64, u: Option<&DMatrix<f64>>, w: Option<&DMatrix<f64>>) -> Option<DMatrix<f64>> {
        let fu = u.map(|u| self.plant.b(t) * u);
        let fw = w.map(|w| self.plant.bd(t) * w);
        match (fu, fw) {
            (Some(a), Some(b)) => Some(a + b),
            (a, b) => a.or(b),
        }
    }

    /// `y = C(t) x + D(t) u` for a batch of columns.
    pub fn output_at(&self, t: f64, x: &DMatrix<f64>, u: Option<&DMatrix<f64>>) -> DMatrix<f64> {
        let mut y = self.plant.c(t) * x;
        if let Some(u) = u {
            y += self.plant.d(t) * u;
        }
        y
    }

    /// `x(t) = U_A(t,s)x + ∫_s^t U_A(t,r)[B(r)u(r) + B_d(r)w(r)] dr`.
    pub fn propagate(
        &self,
        s: f64,
        t: f64,
        x: &DVector<f64>,
        u: Option<&dyn TimeSignal>,
        w: Option<&dyn TimeSignal>,
    ) -> Result<DVector<f64>> {
        let ub = u.map(SignalBatch::single);
        let wb = w.map(SignalBatch::single);
        let drive = Drive {
            input: ub.as_ref().map(|b| b as &dyn BatchSignal),
            disturbance: wb.as_ref().map(|b| b as &dyn BatchSignal),
        };
        let x0 = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
        let out = self.integrate(s, t, x0, drive, None)?;
        Ok(out.column(0).into_owned())
    }

    /// `U_A(t, s)` for `t >= s`.
    pub fn transition(&self, t: f64, s: f64) -> Result<DMatrix<f64>> {
        let n = self.plant.dims().states;
        self.integrate(s, t, DMatrix::identity(n, n), Drive::none(), None)
    }

    /// `U_A(τ, 0)`, computed once.
    pub fn monodromy(&self) -> Result<&DMatrix<f64>> {
        if let Some(m) = self.monodromy.get() {
            return Ok(m);
        }
        let m = self.transition(self.tau(), 0.0)?;
        Ok(self.monodromy.get_or_init(|| m))
    }

    /// Monodromy of a piecewise-constant plant as the ordered product of the
    /// matrix exponentials of its pieces.
    pub fn monodromy_by_exponentials(&self) -> Result<DMatrix<f64>> {
        let pieces = self
            .plant
            .pieces()
            .ok_or_else(|| Error::Config("plant is not piecewise constant".into()))?;
        let n = self.plant.dims().states;
        let mut m = DMatrix::<f64>::identity(n, n);
        for p in pieces {
            m = (&p.a * (p.end - p.start)).exp() * m;
        }
        Ok(m)
    }

    /// Exponential stability iff every monodromy eigenvalue satisfies
    /// `|λ| < 1 - margin`.
    pub fn is_exponentially_stable(&self, margin: f64) -> Result<StabilityReport> {
        let eigenvalues = linalg::real_eigenvalues(self.monodromy()?)?;
        let spectral_radius = linalg::spectral_radius(&eigenvalues);
        Ok(StabilityReport {
            stable: spectral_radius < 1.0 - margin,
            spectral_radius,
            eigenvalues,
        })
    }
}

fn add_opt(k: &mut DMatrix<f64>, f: &Option<DMatrix<f64>>) {
    if let Some(f) = f {
        *k += f;
    }
}
