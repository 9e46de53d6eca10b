use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use nalgebra::DVector;
use serde_json::json;

use periodic_regulation::benchmarks::{
    run_heat_suite_with, run_oscillator_suite_with, SuiteMode, SuiteSettings, SUITE_IMAG_CAP,
};
use periodic_regulation::closed_loop::{
    build_closed_loop_matrix, log_grid, simulate_closed_loop, tune_epsilon, ClosedLoopMethod, ControlLaw, Exogenous,
    SimulationOptions,
};
use periodic_regulation::config::{PlantConfig, SignalSpec, SignalsConfig};
use periodic_regulation::evolution::EvolutionFamily;
use periodic_regulation::identification::{measure_operator, operator_from_probe_traces, IdentificationConfig, Trace};
use periodic_regulation::lifting::{lift, Channel, LiftBases, LiftedSteadyStateOperator};
use periodic_regulation::regulators::{
    low_frequency_subspace, synthesize_approx_robust, synthesize_feedforward, synthesize_orp_feedback,
    synthesize_robust, Controller, FeedbackController,
};
use periodic_regulation::signal::{PeriodicSignal, SignalBasis, DEFAULT_GRID};

#[derive(Parser)]
#[command(name = "preg", version, about = "Output regulation of periodic linear systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monodromy spectrum and stability verdict.
    Stability {
        #[arg(long)]
        plant: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        margin: f64,
    },
    /// Quadrature steady-state operator from the lifted system.
    Lift {
        #[arg(long)]
        plant: PathBuf,
        #[arg(long)]
        order: usize,
        #[arg(long, value_enum, default_value_t = ChannelArg::Control)]
        channel: ChannelArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measured steady-state operator from simulated or recorded responses.
    Identify {
        #[arg(long)]
        plant: PathBuf,
        #[arg(long)]
        order: usize,
        #[arg(long, default_value_t = 10)]
        settle_periods: usize,
        #[arg(long, value_enum, default_value_t = ChannelArg::Control)]
        channel: ChannelArg,
        /// Directory of recorded probe responses `probe{j}.csv` (columns t, y...).
        #[arg(long)]
        traces: Option<PathBuf>,
        /// Fill value of the initial state of every probing run.
        #[arg(long)]
        x0: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Controller synthesis from operator files and a signal file.
    Synthesize {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        p: PathBuf,
        /// Disturbance operator, needed when the signals carry disturbances.
        #[arg(long)]
        pd: Option<PathBuf>,
        #[arg(long)]
        signals: PathBuf,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Plant used to tune the gain when `--epsilon` is absent.
        #[arg(long)]
        plant: Option<PathBuf>,
        #[arg(long, default_value_t = 7)]
        y_n_max_freq: usize,
        #[arg(long, default_value_t = SUITE_IMAG_CAP)]
        imag_cap: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-loop simulation with a stored controller.
    ClosedLoop {
        #[arg(long)]
        plant: PathBuf,
        #[arg(long)]
        controller: PathBuf,
        #[arg(long)]
        signals: PathBuf,
        #[arg(long, default_value_t = 20)]
        periods: usize,
        #[arg(long)]
        x0: Option<f64>,
        #[arg(long, default_value_t = 16)]
        sample_stride: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Spectral radius of `A_e` over a log grid of gains.
    TuneEpsilon {
        #[arg(long)]
        plant: PathBuf,
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        p: PathBuf,
        #[arg(long)]
        pd: Option<PathBuf>,
        #[arg(long)]
        signals: Option<PathBuf>,
        #[arg(long, default_value_t = 7)]
        y_n_max_freq: usize,
        #[arg(long, default_value_t = 0.01)]
        lo: f64,
        #[arg(long, default_value_t = 1.0)]
        hi: f64,
        #[arg(long, default_value_t = 25)]
        count: usize,
        #[arg(long, default_value_t = SUITE_IMAG_CAP)]
        imag_cap: f64,
        #[arg(long, value_enum, default_value_t = MethodArg::Column)]
        method: MethodArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// End-to-end benchmark runs writing CSV/JSON artifacts.
    Bench {
        #[arg(value_enum)]
        benchmark: BenchArg,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        periods: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Tune the gain instead of using the benchmark default.
        #[arg(long, conflicts_with = "epsilon")]
        tune: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ChannelArg {
    Control,
    Disturbance,
}

impl From<ChannelArg> for Channel {
    fn from(c: ChannelArg) -> Self {
        match c {
            ChannelArg::Control => Channel::Control,
            ChannelArg::Disturbance => Channel::Disturbance,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Feedforward,
    OrpFeedback,
    Robust,
    ApproxRobust,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Column,
    Block,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchArg {
    Oscillators,
    Heat2d,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Feedforward,
    Feedback,
    ApproxRobust,
}

impl From<ModeArg> for SuiteMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Feedforward => SuiteMode::Feedforward,
            ModeArg::Feedback => SuiteMode::Feedback,
            ModeArg::ApproxRobust => SuiteMode::ApproxRobust,
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Stability { plant, margin } => {
            let ev = load_plant(&plant)?;
            let r = ev.is_exponentially_stable(margin)?;
            let eig: Vec<[f64; 2]> = r.eigenvalues.iter().map(|l| [l.re, l.im]).collect();
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "stable": r.stable,
                    "spectral_radius": r.spectral_radius,
                    "eigenvalues": eig,
                }))?
            );
        }
        Command::Lift {
            plant,
            order,
            channel,
            out,
        } => {
            let ev = load_plant(&plant)?;
            let sys = lift(&ev, LiftBases::uniform(&ev, order)?)?;
            let op = sys.steady_state_operator(channel.into())?;
            op.save(&out)?;
            info!("condition number of I - Â: {:.3e}", op.condition.unwrap_or(f64::NAN));
        }
        Command::Identify {
            plant,
            order,
            settle_periods,
            channel,
            traces,
            x0,
            out,
        } => {
            let ev = load_plant(&plant)?;
            let op = match traces {
                Some(dir) => identify_from_traces(&ev, order, settle_periods, channel, &dir)?,
                None => {
                    let mut cfg = IdentificationConfig::new(settle_periods, order)?;
                    if let Some(v) = x0 {
                        cfg = cfg.with_initial_state(DVector::from_element(ev.plant().dims().states, v));
                    }
                    measure_operator(&ev, &cfg, channel.into())?
                }
            };
            op.save(&out)?;
        }
        Command::Synthesize {
            kind,
            p,
            pd,
            signals,
            epsilon,
            plant,
            y_n_max_freq,
            imag_cap,
            out,
        } => {
            let p = LiftedSteadyStateOperator::load(&p)?;
            let pd = pd.map(|f| LiftedSteadyStateOperator::load(&f)).transpose()?;
            let sig = SignalsConfig::load(&signals)?;
            let ctrl = match kind {
                KindArg::Feedforward => {
                    let y_ref = project(&sig.y_ref, p.out_basis)?;
                    let pd_w = disturbance_response(pd.as_ref(), sig.w_dist.as_ref(), p.out_basis)?;
                    let law = synthesize_feedforward(&p, &pd_w, &y_ref)?;
                    info!("feedforward residual {:.3e}", law.residual);
                    Controller::Feedforward(law)
                }
                _ => {
                    let family = feedback_family(kind, &p, pd.as_ref(), Some(&sig), y_n_max_freq)?;
                    let eps = match (epsilon, plant) {
                        (Some(e), _) => e,
                        (None, Some(plant)) => {
                            let ev = load_plant(&plant)?;
                            let t = tune_epsilon(
                                &ev,
                                &family,
                                &log_grid(0.01, 1.0, 25),
                                imag_cap,
                                ClosedLoopMethod::ColumnSimulation,
                            )?;
                            info!("tuned epsilon {:.4} with spectral radius {:.4}", t.best, t.best_radius);
                            t.best
                        }
                        (None, None) => bail!("feedback synthesis needs --epsilon or a --plant to tune it on"),
                    };
                    Controller::Feedback(family(eps)?)
                }
            };
            ctrl.save(&out)?;
        }
        Command::ClosedLoop {
            plant,
            controller,
            signals,
            periods,
            x0,
            sample_stride,
            out_dir,
        } => {
            let ev = load_plant(&plant)?;
            let ctrl = Controller::load(&controller)?;
            let sig = SignalsConfig::load(&signals)?.build(ev.plant())?;
            let mut opts = SimulationOptions::new(periods, ev.plant().dims().states);
            if let Some(v) = x0 {
                opts.x0 = DVector::from_element(ev.plant().dims().states, v);
            }
            opts.sample_stride = sample_stride;
            let (law, radius) = match &ctrl {
                Controller::Feedforward(f) => (ControlLaw::Feedforward(f), None),
                Controller::Feedback(c) => {
                    let m = build_closed_loop_matrix(&ev, c, ClosedLoopMethod::ColumnSimulation)?;
                    (ControlLaw::Feedback(c), Some(m.spectral_radius))
                }
            };
            let exo = Exogenous {
                y_ref: &sig.y_ref,
                w_dist: sig.w_dist_ref(),
            };
            let trace = simulate_closed_loop(&ev, law, exo, &opts)?;
            fs::create_dir_all(&out_dir)?;
            trace.write_csv(&out_dir.join("trace.csv"))?;
            let report = json!({
                "per_period_errors": trace.per_period_errors,
                "fitted_rate": trace.fitted_rate,
                "closed_loop_spectral_radius": radius,
            });
            fs::write(out_dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
            info!("final per-period error {:.3e}", trace.last_error());
        }
        Command::TuneEpsilon {
            plant,
            kind,
            p,
            pd,
            signals,
            y_n_max_freq,
            lo,
            hi,
            count,
            imag_cap,
            method,
            out,
        } => {
            if kind == KindArg::Feedforward {
                bail!("a feedforward law has no gain to tune");
            }
            let ev = load_plant(&plant)?;
            let p = LiftedSteadyStateOperator::load(&p)?;
            let pd = pd.map(|f| LiftedSteadyStateOperator::load(&f)).transpose()?;
            let sig = signals.map(|f| SignalsConfig::load(&f)).transpose()?;
            let family = feedback_family(kind, &p, pd.as_ref(), sig.as_ref(), y_n_max_freq)?;
            let method = match method {
                MethodArg::Column => ClosedLoopMethod::ColumnSimulation,
                MethodArg::Block => ClosedLoopMethod::BlockAssembly,
            };
            let report = tune_epsilon(&ev, &family, &log_grid(lo, hi, count), imag_cap, method)?;
            report.write_csv(&out)?;
            println!("best epsilon {} (spectral radius {:.6})", report.best, report.best_radius);
        }
        Command::Bench {
            benchmark,
            mode,
            out_dir,
            grid,
            periods,
            epsilon,
            tune,
        } => {
            let mode = SuiteMode::from(mode);
            let mut settings = match benchmark {
                BenchArg::Oscillators => SuiteSettings::oscillator(mode),
                BenchArg::Heat2d => SuiteSettings::heat(mode),
            };
            if let Some(g) = grid {
                settings.grid = g;
            }
            if let Some(n) = periods {
                settings.periods = n;
            }
            if epsilon.is_some() {
                settings.epsilon = epsilon;
            }
            if tune {
                settings.epsilon = None;
            }
            let run = match benchmark {
                BenchArg::Oscillators => run_oscillator_suite_with(mode, &settings)?,
                BenchArg::Heat2d => run_heat_suite_with(mode, &settings)?,
            };
            run.write_artifacts(&out_dir)?;
            println!("{}", serde_json::to_string_pretty(&run.report)?);
        }
    }
    Ok(())
}

fn load_plant(path: &Path) -> Result<EvolutionFamily> {
    let cfg = PlantConfig::load(path).with_context(|| format!("reading plant config {}", path.display()))?;
    Ok(EvolutionFamily::new(cfg.build()?))
}

fn project(spec: &SignalSpec, basis: SignalBasis) -> Result<PeriodicSignal> {
    Ok(PeriodicSignal::project(&spec.build(basis.tau)?, basis, DEFAULT_GRID)?)
}

fn disturbance_response(
    pd: Option<&LiftedSteadyStateOperator>,
    w: Option<&SignalSpec>,
    out_basis: SignalBasis,
) -> Result<PeriodicSignal> {
    match (pd, w) {
        (_, None) => Ok(PeriodicSignal::zeros(out_basis)),
        (Some(pd), Some(w)) => Ok(pd.apply(&project(w, pd.in_basis)?)?),
        (None, Some(_)) => bail!("the signals carry a disturbance but no --pd operator was given"),
    }
}

type Family = Box<dyn Fn(f64) -> periodic_regulation::Result<FeedbackController>>;

fn feedback_family(
    kind: KindArg,
    p: &LiftedSteadyStateOperator,
    pd: Option<&LiftedSteadyStateOperator>,
    sig: Option<&SignalsConfig>,
    y_n_max_freq: usize,
) -> Result<Family> {
    let p = p.clone();
    Ok(match kind {
        KindArg::Feedforward => bail!("feedforward is not a feedback design"),
        KindArg::OrpFeedback => {
            let sig = sig.context("orp-feedback needs --signals")?;
            let y_ref = project(&sig.y_ref, p.out_basis)?;
            let pd_wks = sig
                .dictionary
                .iter()
                .map(|w| disturbance_response(pd, Some(w), p.out_basis))
                .collect::<Result<Vec<_>>>()?;
            Box::new(move |eps| synthesize_orp_feedback(&p, &pd_wks, &y_ref, eps))
        }
        KindArg::Robust => Box::new(move |eps| synthesize_robust(&p, None, eps)),
        KindArg::ApproxRobust => {
            let idx = low_frequency_subspace(&p.out_basis, y_n_max_freq);
            Box::new(move |eps| synthesize_approx_robust(&p, &idx, eps))
        }
    })
}

fn identify_from_traces(
    ev: &EvolutionFamily,
    order: usize,
    settle_periods: usize,
    channel: ChannelArg,
    dir: &Path,
) -> Result<LiftedSteadyStateOperator> {
    if matches!(channel, ChannelArg::Disturbance) {
        bail!("recorded traces are read for the control channel only");
    }
    let d = ev.plant().dims();
    let in_basis = SignalBasis::new(ev.tau(), order, d.inputs)?;
    let out_basis = SignalBasis::new(ev.tau(), order, d.outputs)?;
    let traces = (0..in_basis.len())
        .map(|j| {
            let path = dir.join(format!("probe{j}.csv"));
            Trace::read_csv(&path).with_context(|| format!("reading {}", path.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(operator_from_probe_traces(in_basis, out_basis, &traces, settle_periods)?)
}
