//! Scenario execution for each experiment command.

use std::time::Instant;

use num_complex::Complex64;
use serde::Serialize;

use super::config::{ScenarioConfig, WeightScheme};
use super::output::{
    save_rows, save_spectrum_csv, save_trajectory_csv, write_text, write_toml, trajectory_svg,
};
use crate::analysis::{
    basin_from_states, bohr_fourier_closed, bohr_fourier_free, convergence_schedule, n_bar,
    truncated_family, uniform_initial_states, BasinEstimate, ConvergenceSchedule,
};
use crate::dynamics::{integrate, ControlLaw, Trajectory};
use crate::ensemble::{EnsembleState, Pole};
use crate::error::{Error, Result};
use crate::spectral::{spectrum_at, Classification, EquilibriumReport};

/// Level used for the settle time reported in run summaries.
pub const SETTLE_LEVEL: f64 = 0.9;
pub const FOURIER_TOLERANCE: f64 = 0.02;

/// The pole a law is expected to drive the ensemble to.
pub fn target_pole(law: &ControlLaw) -> Option<Pole> {
    match law {
        ControlLaw::Zero => None,
        ControlLaw::FullSum | ControlLaw::Weighted | ControlLaw::Truncated { .. } => Some(Pole::Down),
        ControlLaw::RadiationDamping { sign, .. } => Some(*sign),
    }
}

/// `Down` when every `z_i < z_threshold`, `Up` when every `z_i > -z_threshold`.
pub fn approached_pole(s: &EnsembleState, z_threshold: f64) -> Option<Pole> {
    let z = s.spins().iter().map(|x| x.z());
    if z.clone().all(|z| z < z_threshold) {
        Some(Pole::Down)
    } else if z.clone().all(|z| z > -z_threshold) {
        Some(Pole::Up)
    } else {
        None
    }
}

/// Earliest sample time from which every spin stays beyond `level` on the
/// side of `pole` (`z_i < -level` for `Down`, `z_i > level` for `Up`) up to
/// the end of the trajectory.
pub fn settle_time(traj: &Trajectory, pole: Pole, level: f64) -> Option<f64> {
    let inside = |k: usize| {
        traj.spins[k]
            .iter()
            .all(|s| pole.sign() * s.z() > level)
    };
    match (0..traj.len()).rposition(|k| !inside(k)) {
        None => traj.times.first().copied(),
        Some(k) if k + 1 < traj.len() => Some(traj.times[k + 1]),
        Some(_) => None,
    }
}

/// Whether every spin sits exactly on a pole.
pub fn is_equilibrium(s: &EnsembleState) -> bool {
    s.spins().iter().all(|x| x.x() == 0.0 && x.y() == 0.0)
}

fn pole_name(p: Option<Pole>) -> String {
    match p {
        Some(Pole::Down) => "down".into(),
        Some(Pole::Up) => "up".into(),
        None => "none".into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub p: usize,
    pub law: String,
    pub method: String,
    pub h: f64,
    pub t_final: f64,
    pub samples: usize,
    pub min_freq_gap: f64,
    pub final_lyapunov: f64,
    pub final_spins: Vec<[f64; 3]>,
    pub max_norm_drift: f64,
    pub max_lyapunov_increase: f64,
    /// Reached the law's target pole (any pole for free precession).
    pub converged: bool,
    pub approached_pole: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub settle_time: Option<f64>,
    /// The initial state is itself an equilibrium.
    pub non_generic: bool,
    pub wall_clock_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub trajectory: Trajectory,
}

/// Integrates the scenario without touching the file system.
pub fn simulate(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let s0 = cfg.materialize()?;
    let icfg = cfg.integrator.config()?;
    let start = Instant::now();
    let traj = integrate(&s0, &cfg.law, &icfg, cfg.integrator.stride)?;
    let wall = start.elapsed().as_secs_f64();

    let fin = traj.final_state();
    let approached = approached_pole(&fin, cfg.z_threshold);
    let target = target_pole(&cfg.law);
    let converged = match target {
        Some(pole) => approached == Some(pole),
        None => approached.is_some(),
    };
    let method = serde_plain_name(&cfg.integrator.method);
    let summary = RunSummary {
        seed: cfg.seed,
        p: cfg.p,
        law: cfg.law.to_string(),
        method,
        h: icfg.h,
        t_final: traj.t_final(),
        samples: traj.len(),
        min_freq_gap: traj.freqs.min_gap(),
        final_lyapunov: *traj.lyapunov.last().expect("at least one sample"),
        final_spins: fin.vectors(),
        max_norm_drift: traj.max_norm_drift,
        max_lyapunov_increase: traj.max_lyapunov_increase.max(0.0),
        converged,
        approached_pole: pole_name(approached),
        settle_time: target.and_then(|pole| settle_time(&traj, pole, SETTLE_LEVEL)),
        non_generic: is_equilibrium(&s0),
        wall_clock_seconds: wall,
    };
    Ok(RunOutput {
        summary,
        trajectory: traj,
    })
}

fn serde_plain_name<T: Serialize>(v: &T) -> String {
    #[derive(Serialize)]
    struct Wrap<'a, T> {
        v: &'a T,
    }
    toml::to_string(&Wrap { v })
        .ok()
        .and_then(|s| s.split('"').nth(1).map(str::to_string))
        .unwrap_or_default()
}

/// Integrates the scenario and writes the trajectory CSV, the summary and,
/// if requested, the SVG plot.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let out = simulate(cfg)?;
    let o = &cfg.outputs;
    save_trajectory_csv(&o.path(&o.trajectory_csv), &out.trajectory)?;
    write_toml(&o.path(&o.summary), &out.summary)?;
    if let Some(svg) = &o.svg {
        write_text(&o.path(svg), &trajectory_svg(&out.trajectory))?;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumSummary {
    pub seed: u64,
    pub p: usize,
    pub freqs: Vec<f64>,
    pub selection: String,
    pub equilibria: usize,
    pub attractors: usize,
    pub repellers: usize,
    pub saddles: usize,
    pub all_hyperbolic: bool,
    pub min_abs_real: f64,
    pub max_residual: f64,
    pub near_degenerate: bool,
}

/// Spectral reports for the selected equilibria.
pub fn spectrum_reports(cfg: &ScenarioConfig) -> Result<Vec<EquilibriumReport>> {
    cfg.validate()?;
    cfg.validate_spectrum()?;
    let freqs = cfg.frequencies()?;
    cfg.spectrum
        .which
        .equilibria(cfg.p)?
        .iter()
        .map(|q| spectrum_at(q, &freqs))
        .collect()
}

pub fn summarize_spectrum(cfg: &ScenarioConfig, reports: &[EquilibriumReport]) -> Result<SpectrumSummary> {
    let count = |c: Classification| reports.iter().filter(|r| r.classification == c).count();
    Ok(SpectrumSummary {
        seed: cfg.seed,
        p: cfg.p,
        freqs: cfg.frequencies()?.as_slice().to_vec(),
        selection: cfg.spectrum.which.to_string(),
        equilibria: reports.len(),
        attractors: count(Classification::Attractor),
        repellers: count(Classification::Repeller),
        saddles: count(Classification::Saddle),
        all_hyperbolic: reports.iter().all(|r| r.hyperbolic),
        min_abs_real: reports.iter().map(|r| r.min_abs_real).fold(f64::INFINITY, f64::min),
        max_residual: reports.iter().map(|r| r.max_residual()).fold(0.0, f64::max),
        near_degenerate: reports.iter().any(|r| r.near_degenerate),
    })
}

pub fn run_spectrum(cfg: &ScenarioConfig) -> Result<(Vec<EquilibriumReport>, SpectrumSummary)> {
    let reports = spectrum_reports(cfg)?;
    let summary = summarize_spectrum(cfg, &reports)?;
    let o = &cfg.outputs;
    save_spectrum_csv(&o.path(&cfg.spectrum.report_csv), &reports)?;
    write_toml(&o.path(&o.summary), &summary)?;
    Ok((reports, summary))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BasinSummary {
    pub seed: u64,
    pub p: usize,
    pub law: String,
    pub freqs: Vec<f64>,
    pub samples: usize,
    pub converged: usize,
    pub fraction: f64,
    pub z_threshold: f64,
    pub horizon: f64,
}

/// Monte-Carlo basin estimate for the scenario's law and frequencies.
pub fn basin(cfg: &ScenarioConfig) -> Result<BasinEstimate> {
    cfg.validate()?;
    let freqs = cfg.frequencies()?;
    let weights = cfg.weight_vector()?;
    let initial = uniform_initial_states(&freqs, &weights, cfg.basin.samples, cfg.seed)?;
    basin_from_states(&initial, &cfg.law, &cfg.integrator.config()?, cfg.z_threshold)
}

pub const BASIN_HEADER: &str = "index,converged,max_final_z,final_lyapunov";

pub fn run_basin(cfg: &ScenarioConfig) -> Result<(BasinEstimate, BasinSummary)> {
    let est = basin(cfg)?;
    let summary = BasinSummary {
        seed: cfg.seed,
        p: cfg.p,
        law: cfg.law.to_string(),
        freqs: cfg.frequencies()?.as_slice().to_vec(),
        samples: est.samples,
        converged: est.converged,
        fraction: est.fraction,
        z_threshold: est.z_threshold,
        horizon: est.horizon,
    };
    let rows: Vec<String> = est
        .outcomes
        .iter()
        .map(|o| format!("{},{},{:e},{:e}", o.index, o.converged, o.max_final_z, o.final_lyapunov))
        .collect();
    let o = &cfg.outputs;
    save_rows(&o.path(&cfg.basin.outcomes_csv), BASIN_HEADER, &rows)?;
    write_toml(&o.path(&o.summary), &summary)?;
    Ok((est, summary))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScheduleSummary {
    pub seed: u64,
    pub p: usize,
    pub epsilon: f64,
    pub n_bar: usize,
    pub orders: Vec<usize>,
    pub all_converged: bool,
    pub horizon: f64,
}

/// Truncation orders covered by the schedule.
pub fn schedule_orders(cfg: &ScenarioConfig) -> Result<Vec<usize>> {
    let nb = n_bar(cfg.truncated.epsilon)?;
    let lo = cfg.truncated.n_min.unwrap_or(nb);
    let hi = cfg.truncated.n_max.unwrap_or(cfg.p);
    if lo > hi {
        return Err(Error::config(
            "truncated.n_min",
            format!("first order {lo} exceeds last order {hi} (p = {})", cfg.p),
        ));
    }
    Ok((lo..=hi).collect())
}

/// Runs `Truncated(N)` for every scheduled order from the scenario's
/// initial state.
pub fn truncated_schedule(cfg: &ScenarioConfig) -> Result<ConvergenceSchedule> {
    let dyadic = matches!(cfg.weights, WeightScheme::Dyadic)
        || matches!(cfg.weights, WeightScheme::Geometric { base } if base == 2.0);
    if !dyadic {
        return Err(Error::config("weights", "the truncated schedule needs dyadic weights 2^{-i}"));
    }
    let s0 = cfg.materialize()?;
    let orders = schedule_orders(cfg)?;
    let family = truncated_family(&s0, &orders, &cfg.integrator.config()?, cfg.integrator.stride)?;
    convergence_schedule(&family, cfg.truncated.epsilon)
}

pub const SCHEDULE_HEADER: &str = "n,hitting_time,converged,final_distance,max_distance_after";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

pub fn run_truncated(cfg: &ScenarioConfig) -> Result<(ConvergenceSchedule, ScheduleSummary)> {
    let sched = truncated_schedule(cfg)?;
    let rows: Vec<String> = sched
        .entries
        .iter()
        .map(|e| {
            format!(
                "{},{},{},{:e},{}",
                e.n,
                opt(e.hitting_time),
                e.hitting_time.is_some(),
                e.final_distance,
                opt(e.max_distance_after)
            )
        })
        .collect();
    let summary = ScheduleSummary {
        seed: cfg.seed,
        p: cfg.p,
        epsilon: sched.epsilon,
        n_bar: sched.n_bar,
        orders: sched.entries.iter().map(|e| e.n).collect(),
        all_converged: sched.all_converged(),
        horizon: cfg.integrator.t_final,
    };
    let o = &cfg.outputs;
    save_rows(&o.path(&cfg.truncated.schedule_csv), SCHEDULE_HEADER, &rows)?;
    write_toml(&o.path(&o.summary), &summary)?;
    Ok((sched, summary))
}

/// One numeric coefficient pair against its closed form.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierRow {
    pub omega: f64,
    /// Spin whose frequency is probed (`None` for off-grid probes).
    pub spin: Option<usize>,
    pub numeric: (Complex64, Complex64),
    pub closed: (Complex64, Complex64),
}

impl FourierRow {
    pub fn error(&self) -> f64 {
        (self.numeric.0 - self.closed.0)
            .norm()
            .max((self.numeric.1 - self.closed.1).norm())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FourierSummary {
    pub seed: u64,
    pub p: usize,
    pub horizon: f64,
    pub max_on_grid_error: f64,
    pub max_off_grid_magnitude: f64,
    pub within_tolerance: bool,
    pub warnings: Vec<String>,
}

/// Default off-grid probes: midpoints between neighbouring `|e_i|` and one
/// point above the largest.
pub fn default_off_grid(freqs: &[f64]) -> Vec<f64> {
    let mut e: Vec<f64> = freqs.iter().map(|x| x.abs()).collect();
    e.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = e.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    out.push(e.last().copied().unwrap_or(0.0) + 1.0);
    out
}

/// Compares closed-form Bohr–Fourier coefficients of the free transverse sums
/// with quadrature over the free flow (every integration step).
pub fn fourier(cfg: &ScenarioConfig) -> Result<(Vec<FourierRow>, FourierSummary)> {
    let s0 = cfg.materialize()?;
    let icfg = cfg.integrator.config()?;
    let mut probes: Vec<(f64, Option<usize>, (Complex64, Complex64))> = Vec::new();
    for (i, &e) in s0.freqs().as_slice().iter().enumerate() {
        let c = bohr_fourier_closed(&s0, i)?;
        probes.push((e, Some(i), (c.f_plus, c.g_plus)));
        probes.push((-e, Some(i), (c.f_minus, c.g_minus)));
    }
    let off = if cfg.fourier.off_grid.is_empty() {
        default_off_grid(s0.freqs().as_slice())
    } else {
        cfg.fourier.off_grid.clone()
    };
    let zero = Complex64::new(0.0, 0.0);
    probes.extend(off.into_iter().map(|w| (w, None, (zero, zero))));

    let omegas: Vec<f64> = probes.iter().map(|p| p.0).collect();
    let estimates = bohr_fourier_free(&s0, &omegas, &icfg)?;
    let mut warnings = Vec::new();
    let rows: Vec<FourierRow> = probes
        .into_iter()
        .zip(estimates)
        .map(|((omega, spin, closed), est)| {
            warnings.extend(est.warning);
            FourierRow {
                omega,
                spin,
                numeric: (est.f, est.g),
                closed,
            }
        })
        .collect();
    let on = rows.iter().filter(|r| r.spin.is_some()).map(FourierRow::error).fold(0.0, f64::max);
    let off = rows.iter().filter(|r| r.spin.is_none()).map(FourierRow::error).fold(0.0, f64::max);
    let summary = FourierSummary {
        seed: cfg.seed,
        p: cfg.p,
        horizon: icfg.n_steps() as f64 * icfg.h,
        max_on_grid_error: on,
        max_off_grid_magnitude: off,
        within_tolerance: on <= FOURIER_TOLERANCE && off <= FOURIER_TOLERANCE,
        warnings,
    };
    Ok((rows, summary))
}

pub const FOURIER_HEADER: &str =
    "omega,spin,f_re,f_im,g_re,g_im,closed_f_re,closed_f_im,closed_g_re,closed_g_im,error";

pub fn run_fourier(cfg: &ScenarioConfig) -> Result<(Vec<FourierRow>, FourierSummary)> {
    let (rows, summary) = fourier(cfg)?;
    let lines: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{:e},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                r.omega,
                r.spin.map_or_else(String::new, |i| (i + 1).to_string()),
                r.numeric.0.re,
                r.numeric.0.im,
                r.numeric.1.re,
                r.numeric.1.im,
                r.closed.0.re,
                r.closed.0.im,
                r.closed.1.re,
                r.closed.1.im,
                r.error()
            )
        })
        .collect();
    let o = &cfg.outputs;
    save_rows(&o.path(&cfg.fourier.coefficients_csv), FOURIER_HEADER, &lines)?;
    write_toml(&o.path(&o.summary), &summary)?;
    Ok((rows, summary))
}
