//! Lyapunov diagnostics, almost-periodic (Bohr) Fourier coefficients,
//! omega-limit estimates, truncated-feedback convergence schedules and
//! Monte-Carlo basin estimates.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::dynamics::{integrate, integrate_final, integrate_with, ControlLaw, IntegratorConfig, Trajectory};
use crate::ensemble::{
    random_spins, stream_rng, streams, weighted_distance, EnsembleState, FrequencySet, Pole,
    SpinState, WeightVector,
};
use crate::error::{Error, Result};
use crate::spectral::Equilibrium;

/// `V = sum_i w_i z_i`.
pub fn lyapunov(s: &EnsembleState) -> f64 {
    s.spins()
        .iter()
        .zip(s.weights().as_slice())
        .map(|(x, w)| w * x.z())
        .sum()
}

/// Lyapunov function paired with a law: unit weights for the full-sum and
/// radiation-damping laws, the state's weights otherwise, restricted to the
/// observed spins for a truncated law.
pub(crate) fn law_lyapunov_raw(law: &ControlLaw, weights: &[f64], vs: &[[f64; 3]]) -> f64 {
    match *law {
        ControlLaw::FullSum | ControlLaw::RadiationDamping { .. } => vs.iter().map(|v| v[2]).sum(),
        ControlLaw::Truncated { n } => vs[..n].iter().zip(weights).map(|(v, w)| w * v[2]).sum(),
        ControlLaw::Zero | ControlLaw::Weighted => {
            vs.iter().zip(weights).map(|(v, w)| w * v[2]).sum()
        }
    }
}

fn check_convention(law: &ControlLaw, s: &EnsembleState) -> Result<()> {
    law.validate(s.len())?;
    match law {
        ControlLaw::FullSum | ControlLaw::RadiationDamping { .. } if !s.weights().is_unit() => {
            Err(Error::WeightConvention {
                law: law.to_string(),
                reason: "this law sums transverse components with unit weights".into(),
            })
        }
        _ => Ok(()),
    }
}

/// Lyapunov value matching `law`'s weight convention.
pub fn lyapunov_for_law(law: &ControlLaw, s: &EnsembleState) -> Result<f64> {
    check_convention(law, s)?;
    Ok(law_lyapunov_raw(law, s.weights().as_slice(), &s.vectors()))
}

/// Analytic `dV/dt` along the closed loop: `-(u1^2 + u2^2)` for the
/// stabilizing feedbacks, `sign * l * p * (mean_x^2 + mean_y^2)` for
/// radiation damping and zero for free precession.
pub fn lyapunov_rate(s: &EnsembleState, law: &ControlLaw) -> Result<f64> {
    check_convention(law, s)?;
    let u = crate::dynamics::control_value(law, s)?;
    Ok(rate_from_control(law, u, s.len()))
}

fn rate_from_control(law: &ControlLaw, u: crate::ensemble::ControlValue, p: usize) -> f64 {
    match *law {
        ControlLaw::Zero => 0.0,
        ControlLaw::RadiationDamping { rate, sign } => sign.sign() * rate * p as f64 * u.norm_sq(),
        _ => -u.norm_sq(),
    }
}

/// Sampled `V` together with the analytic `dV/dt`.
#[derive(Clone, Debug)]
pub struct LyapunovTrace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub rates: Vec<f64>,
}

impl LyapunovTrace {
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        let p = traj.freqs.len();
        Self {
            times: traj.times.clone(),
            values: traj.lyapunov.clone(),
            rates: traj
                .controls
                .iter()
                .map(|&u| rate_from_control(&traj.law, u, p))
                .collect(),
        }
    }

    /// Largest increase of `V` between consecutive samples.
    pub fn max_increase(&self) -> f64 {
        self.values
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Max over interior samples of `|central difference - analytic rate|`.
    /// Only meaningful on a uniform sample grid.
    pub fn finite_difference_mismatch(&self) -> f64 {
        let n = self.values.len();
        if n < 3 {
            return 0.0;
        }
        (1..n - 1)
            .filter(|&k| (self.times[k + 1] - self.times[k] - (self.times[k] - self.times[k - 1])).abs() < 1e-9)
            .map(|k| {
                let fd = (self.values[k + 1] - self.values[k - 1]) / (self.times[k + 1] - self.times[k - 1]);
                (fd - self.rates[k]).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Bohr–Fourier coefficients of the free transverse sums
/// `f(t) = sum w_i x_i(t)` and `g(t) = sum w_i y_i(t)` at `±e_i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BohrCoefficients {
    pub f_plus: Complex64,
    pub f_minus: Complex64,
    pub g_plus: Complex64,
    pub g_minus: Complex64,
}

/// Closed-form coefficients for spin `index` (0-based):
/// `a(f, e) = w (x + iy) / 2`, `a(f, -e) = w (x - iy) / 2`,
/// `a(g, e) = w (y - ix) / 2`, `a(g, -e) = w (y + ix) / 2`.
/// With `w_i = 2^{-i}` (1-based `i`) the prefactor is `2^{-(i+1)}`.
pub fn bohr_fourier_closed(s0: &EnsembleState, index: usize) -> Result<BohrCoefficients> {
    let spin = s0.spins().get(index).ok_or_else(|| {
        Error::invalid("index", format!("spin index {index} out of range for p = {}", s0.len()))
    })?;
    let half_w = 0.5 * s0.weights().as_slice()[index];
    let (x, y) = (spin.x(), spin.y());
    Ok(BohrCoefficients {
        f_plus: half_w * Complex64::new(x, y),
        f_minus: half_w * Complex64::new(x, -y),
        g_plus: half_w * Complex64::new(y, -x),
        g_minus: half_w * Complex64::new(y, x),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FourierEstimate {
    pub omega: f64,
    pub f: Complex64,
    pub g: Complex64,
    /// Set when the window is too short to separate `omega` from the
    /// nearest ensemble frequency.
    pub warning: Option<String>,
}

/// Trapezoidal estimate of `(1/T) int_0^T f(t) exp(-i omega t) dt` (and the
/// same for `g`) over a free-precession trajectory.
pub fn bohr_fourier_numeric(traj: &Trajectory, omega: f64) -> Result<FourierEstimate> {
    if traj.law != ControlLaw::Zero {
        return Err(Error::Precondition(
            "Fourier coefficients are defined for the free (zero-control) flow".into(),
        ));
    }
    if traj.len() < 2 {
        return Err(Error::Precondition("trajectory needs at least two samples".into()));
    }
    let w = traj.weights.as_slice();
    let sample = |k: usize| -> (Complex64, Complex64) {
        let (mut f, mut g) = (0.0, 0.0);
        for (s, wi) in traj.spins[k].iter().zip(w) {
            f += wi * s.x();
            g += wi * s.y();
        }
        let phase = Complex64::from_polar(1.0, -omega * traj.times[k]);
        (f * phase, g * phase)
    };
    let mut acc_f = Complex64::new(0.0, 0.0);
    let mut acc_g = Complex64::new(0.0, 0.0);
    let mut prev = sample(0);
    for k in 1..traj.len() {
        let cur = sample(k);
        let dt = traj.times[k] - traj.times[k - 1];
        acc_f += 0.5 * dt * (prev.0 + cur.0);
        acc_g += 0.5 * dt * (prev.1 + cur.1);
        prev = cur;
    }
    Ok(finish_estimate(omega, acc_f, acc_g, traj.t_final(), &traj.freqs))
}

fn finish_estimate(omega: f64, acc_f: Complex64, acc_g: Complex64, t: f64, freqs: &FrequencySet) -> FourierEstimate {
    let nearest = freqs
        .as_slice()
        .iter()
        .flat_map(|&e| [(omega - e).abs(), (omega + e).abs()])
        .filter(|&d| d > 1e-12)
        .fold(f64::INFINITY, f64::min);
    let needed = 10.0 * std::f64::consts::TAU / nearest;
    let warning = (t < needed).then(|| {
        format!("window T = {t} is shorter than 10 beat periods ({needed:.1}) around omega = {omega}")
    });
    FourierEstimate {
        omega,
        f: acc_f / t,
        g: acc_g / t,
        warning,
    }
}

/// Same quadrature as [`bohr_fourier_numeric`] at every integration step,
/// accumulated while integrating the free flow from `s0`, for several
/// probe frequencies at once. Memory does not grow with the horizon.
pub fn bohr_fourier_free(s0: &EnsembleState, omegas: &[f64], cfg: &IntegratorConfig) -> Result<Vec<FourierEstimate>> {
    if cfg.n_steps() == 0 {
        return Err(Error::Precondition("horizon must cover at least one step".into()));
    }
    let w = s0.weights().as_slice().to_vec();
    let n = omegas.len();
    let mut acc = vec![(Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)); n];
    let mut prev: Option<(f64, f64)> = None;
    // Phases advance by a fixed rotation per step, refreshed periodically
    // from the exact value to keep rounding from accumulating.
    let rot: Vec<Complex64> = omegas.iter().map(|&o| Complex64::from_polar(1.0, -o * cfg.h)).collect();
    let mut phase = vec![Complex64::new(1.0, 0.0); n];
    let mut prev_phase = phase.clone();
    let h = cfg.h;
    integrate_with(s0, &ControlLaw::Zero, cfg, |k, t, x| {
        let (mut f, mut g) = (0.0, 0.0);
        for (v, wi) in x.iter().zip(&w) {
            f += wi * v[0];
            g += wi * v[1];
        }
        if k % 4096 == 0 {
            for (ph, &o) in phase.iter_mut().zip(omegas) {
                *ph = Complex64::from_polar(1.0, -o * t);
            }
        }
        if let Some((pf, pg)) = prev {
            for j in 0..n {
                acc[j].0 += 0.5 * h * (pf * prev_phase[j] + f * phase[j]);
                acc[j].1 += 0.5 * h * (pg * prev_phase[j] + g * phase[j]);
            }
        }
        prev = Some((f, g));
        prev_phase.copy_from_slice(&phase);
        for (ph, r) in phase.iter_mut().zip(&rot) {
            *ph *= r;
        }
    })?;
    let t = cfg.n_steps() as f64 * cfg.h;
    Ok(omegas
        .iter()
        .zip(acc)
        .map(|(&o, (af, ag))| finish_estimate(o, af, ag, t, s0.freqs()))
        .collect())
}

/// Tail average of a trajectory and its spread.
#[derive(Clone, Debug)]
pub struct OmegaLimit {
    pub mean: Vec<[f64; 3]>,
    /// Largest distance of a tail sample from its per-spin mean.
    pub dispersion: f64,
    /// Pole pattern of the mean when it lies in the pole set.
    pub pattern: Option<Equilibrium>,
    pub converged: bool,
}

pub const OMEGA_LIMIT_TOLERANCE: f64 = 1e-3;

pub fn omega_limit(traj: &Trajectory, tail_fraction: f64) -> Result<OmegaLimit> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::invalid(
            "tail_fraction",
            format!("must lie in (0, 1], got {tail_fraction}"),
        ));
    }
    if traj.is_empty() {
        return Err(Error::Precondition("empty trajectory".into()));
    }
    let n = traj.len();
    let start = n - ((n as f64 * tail_fraction).ceil() as usize).clamp(1, n);
    let tail = &traj.spins[start..];
    let p = traj.freqs.len();

    let mut mean = vec![[0.0; 3]; p];
    for sample in tail {
        for (m, s) in mean.iter_mut().zip(sample) {
            for (d, v) in s.to_array().iter().enumerate() {
                m[d] += v;
            }
        }
    }
    for m in &mut mean {
        for v in m.iter_mut() {
            *v /= tail.len() as f64;
        }
    }
    let dispersion = tail
        .iter()
        .flat_map(|sample| {
            sample.iter().zip(&mean).map(|(s, m)| {
                let a = s.to_array();
                crate::ensemble::norm3([a[0] - m[0], a[1] - m[1], a[2] - m[2]])
            })
        })
        .fold(0.0, f64::max);

    let tol = OMEGA_LIMIT_TOLERANCE;
    let in_pole_set = mean
        .iter()
        .all(|m| m[0].abs() <= tol && m[1].abs() <= tol && (m[2].abs() - 1.0).abs() <= tol);
    let pattern = in_pole_set.then(|| {
        Equilibrium::new(
            mean.iter()
                .map(|m| if m[2] > 0.0 { Pole::Up } else { Pole::Down })
                .collect(),
        )
    });
    Ok(OmegaLimit {
        converged: pattern.is_some() && dispersion <= tol,
        mean,
        dispersion,
        pattern,
    })
}

/// Smallest `N >= 1` with `2^{-N+1} < epsilon`.
pub fn n_bar(epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid("epsilon", format!("must be positive, got {epsilon}")));
    }
    let mut n = 1;
    while 2f64.powi(-(n as i32) + 1) >= epsilon {
        n += 1;
    }
    Ok(n)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleEntry {
    pub n: usize,
    /// First sample time after which the trajectory never leaves the
    /// `epsilon`-ball around the south pole within the horizon.
    pub hitting_time: Option<f64>,
    pub final_distance: f64,
    /// Largest distance over samples at or after `hitting_time`.
    pub max_distance_after: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceSchedule {
    pub epsilon: f64,
    pub n_bar: usize,
    pub entries: Vec<ScheduleEntry>,
}

impl ConvergenceSchedule {
    pub fn all_converged(&self) -> bool {
        self.entries.iter().all(|e| e.hitting_time.is_some())
    }
}

/// Distance to the south pole at every sample.
pub fn distance_to_south_pole(traj: &Trajectory) -> Vec<f64> {
    let target = crate::ensemble::target_state(&traj.freqs, &traj.weights, Pole::Down)
        .expect("trajectory layout is consistent");
    (0..traj.len())
        .map(|k| weighted_distance(&traj.state(k), &target).expect("same layout"))
        .collect()
}

/// Hitting times `t(N, epsilon)` for a family of truncated-feedback runs
/// given as `(N, trajectory)` pairs.
pub fn convergence_schedule(family: &[(usize, Trajectory)], epsilon: f64) -> Result<ConvergenceSchedule> {
    let n_bar = n_bar(epsilon)?;
    let entries = family
        .iter()
        .map(|(n, traj)| {
            let d = distance_to_south_pole(traj);
            let first_inside = d.iter().rposition(|&x| x > epsilon).map_or(Some(0), |k| {
                (k + 1 < d.len()).then_some(k + 1)
            });
            ScheduleEntry {
                n: *n,
                hitting_time: first_inside.map(|k| traj.times[k]),
                final_distance: *d.last().unwrap_or(&f64::NAN),
                max_distance_after: first_inside.map(|k| d[k..].iter().copied().fold(0.0, f64::max)),
            }
        })
        .collect();
    Ok(ConvergenceSchedule {
        epsilon,
        n_bar,
        entries,
    })
}

/// Runs `Truncated(N)` for every `N` in `orders` in parallel.
pub fn truncated_family(
    s0: &EnsembleState,
    orders: &[usize],
    cfg: &IntegratorConfig,
    stride: usize,
) -> Result<Vec<(usize, Trajectory)>> {
    orders
        .par_iter()
        .map(|&n| integrate(s0, &ControlLaw::Truncated { n }, cfg, stride).map(|t| (n, t)))
        .collect()
}

/// Per-sample basin outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutcome {
    pub index: usize,
    pub converged: bool,
    pub max_final_z: f64,
    pub final_lyapunov: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BasinEstimate {
    pub samples: usize,
    pub converged: usize,
    pub fraction: f64,
    pub z_threshold: f64,
    pub horizon: f64,
    pub outcomes: Vec<SampleOutcome>,
}

/// Whether every spin ends below `z_threshold`.
pub fn reached_south_pole(s: &EnsembleState, z_threshold: f64) -> bool {
    s.spins().iter().all(|x| x.z() < z_threshold)
}

/// Integrates each initial state and counts those ending with every
/// `z_i < z_threshold`. Runs in parallel; outcomes keep input order.
pub fn basin_from_states(
    initial: &[EnsembleState],
    law: &ControlLaw,
    cfg: &IntegratorConfig,
    z_threshold: f64,
) -> Result<BasinEstimate> {
    if initial.is_empty() {
        return Err(Error::invalid("samples", "need at least one sample"));
    }
    let outcomes = initial
        .par_iter()
        .enumerate()
        .map(|(index, s0)| {
            let fin = integrate_final(s0, law, cfg)?;
            Ok(SampleOutcome {
                index,
                converged: reached_south_pole(&fin, z_threshold),
                max_final_z: fin.spins().iter().map(SpinState::z).fold(f64::NEG_INFINITY, f64::max),
                final_lyapunov: lyapunov(&fin),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let converged = outcomes.iter().filter(|o| o.converged).count();
    Ok(BasinEstimate {
        samples: outcomes.len(),
        converged,
        fraction: converged as f64 / outcomes.len() as f64,
        z_threshold,
        horizon: cfg.t_final,
        outcomes,
    })
}

/// Uniform (Haar) initial states on the product of spheres, sample `k`
/// drawn from stream `streams::SAMPLE_BASE + k` of `seed`.
pub fn uniform_initial_states(
    freqs: &FrequencySet,
    weights: &WeightVector,
    samples: usize,
    seed: u64,
) -> Result<Vec<EnsembleState>> {
    (0..samples as u64)
        .map(|k| {
            let mut rng = stream_rng(seed, streams::SAMPLE_BASE + k);
            EnsembleState::new(
                freqs.clone(),
                weights.clone(),
                random_spins(&mut rng, freqs.len(), (-1.0, 1.0))?,
            )
        })
        .collect()
}

/// Monte-Carlo estimate of the fraction of the product of spheres that the
/// closed loop steers to the south pole within `cfg.t_final`.
pub fn basin_monte_carlo(
    freqs: &FrequencySet,
    weights: &WeightVector,
    law: &ControlLaw,
    samples: usize,
    cfg: &IntegratorConfig,
    z_threshold: f64,
    seed: u64,
) -> Result<BasinEstimate> {
    if samples == 0 {
        return Err(Error::invalid("samples", "need at least one sample"));
    }
    let initial = uniform_initial_states(freqs, weights, samples, seed)?;
    basin_from_states(&initial, law, cfg, z_threshold)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::TAU;

    use super::*;
    use crate::dynamics::Method;
    use crate::ensemble::{random_ensemble, target_state};

    fn freqs(e: &[f64]) -> FrequencySet {
        FrequencySet::new(e.to_vec()).unwrap()
    }

    #[test]
    fn lyapunov_examples() {
        let f = freqs(&[1.0, 2.0, 3.0, 4.0]);
        let s = target_state(&f, &WeightVector::unit(4), Pole::Down).unwrap();
        assert_eq!(lyapunov(&s), -4.0);
        let s = EnsembleState::from_vectors(freqs(&[1.0, 2.0]), WeightVector::unit(2), &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
            .unwrap();
        assert_eq!(lyapunov_rate(&s, &ControlLaw::FullSum).unwrap(), -2.0);
    }

    #[test]
    fn convention_mismatch_is_rejected() {
        let s = random_ensemble(1, 3, (1.0, 4.0), (-1.0, 1.0), WeightVector::dyadic(3)).unwrap();
        assert!(matches!(
            lyapunov_rate(&s, &ControlLaw::FullSum),
            Err(Error::WeightConvention { .. })
        ));
        assert!(lyapunov_rate(&s, &ControlLaw::Weighted).is_ok());
        assert!(lyapunov_for_law(&ControlLaw::Truncated { n: 2 }, &s).is_ok());
    }

    #[test]
    fn lyapunov_is_bounded_and_nonincreasing() {
        let w = WeightVector::geometric(6, 1.1).unwrap();
        let s = random_ensemble(3, 6, (1.0, 4.0), (-1.0, 1.0), w.clone()).unwrap();
        let cfg = IntegratorConfig::rk4(0.01, 200.0).unwrap();
        let traj = integrate(&s, &ControlLaw::Weighted, &cfg, 1).unwrap();
        let trace = LyapunovTrace::from_trajectory(&traj);
        assert!(trace.max_increase() <= 1e-8 * cfg.h);
        assert!(trace.values.iter().all(|v| v.abs() <= w.sum() + 1e-12));
        assert!(trace.rates.iter().all(|&r| r <= 0.0));
    }

    #[test]
    fn closed_form_coefficients() {
        let s = EnsembleState::from_vectors(freqs(&[1.0]), WeightVector::dyadic(1), &[[1.0, 0.0, 0.0]]).unwrap();
        let c = bohr_fourier_closed(&s, 0).unwrap();
        assert_eq!(c.f_plus, Complex64::new(0.25, 0.0));
        assert_eq!(c.f_minus, Complex64::new(0.25, 0.0));
        assert_eq!(c.g_plus, Complex64::new(0.0, -0.25));
        assert_eq!(c.g_minus, Complex64::new(0.0, 0.25));

        let s = target_state(&freqs(&[1.0, 2.0]), &WeightVector::dyadic(2), Pole::Up).unwrap();
        let c = bohr_fourier_closed(&s, 1).unwrap();
        for a in [c.f_plus, c.f_minus, c.g_plus, c.g_minus] {
            assert_eq!(a.norm(), 0.0);
        }
        assert!(bohr_fourier_closed(&s, 2).is_err());
    }

    #[test]
    fn numeric_coefficients_match_quadrature() {
        let s = random_ensemble(8, 3, (1.0, 4.0), (-0.9, 0.9), WeightVector::dyadic(3)).unwrap();
        let gap = s.freqs().min_gap();
        let horizon = (200.0 * TAU / gap).max(1000.0);
        let cfg = IntegratorConfig::new(Method::LieEulerRodrigues, 0.05, horizon).unwrap();
        let traj = integrate(&s, &ControlLaw::Zero, &cfg, 1).unwrap();
        for i in 0..3 {
            let e = s.freqs().as_slice()[i];
            let closed = bohr_fourier_closed(&s, i).unwrap();
            let plus = bohr_fourier_numeric(&traj, e).unwrap();
            let minus = bohr_fourier_numeric(&traj, -e).unwrap();
            assert!((plus.f - closed.f_plus).norm() <= 0.02);
            assert!((plus.g - closed.g_plus).norm() <= 0.02);
            assert!((minus.f - closed.f_minus).norm() <= 0.02);
            assert!((minus.g - closed.g_minus).norm() <= 0.02);
        }
        let off = bohr_fourier_numeric(&traj, 7.3).unwrap();
        assert!(off.f.norm() <= 0.02 && off.g.norm() <= 0.02);
    }

    #[test]
    fn numeric_coefficients_vanish_on_pole_set() {
        let s = target_state(&freqs(&[1.0, 2.0]), &WeightVector::dyadic(2), Pole::Down).unwrap();
        let traj = integrate(&s, &ControlLaw::Zero, &IntegratorConfig::rk4(0.1, 100.0).unwrap(), 1).unwrap();
        for omega in [0.0, 1.0, 2.0, -3.3] {
            let est = bohr_fourier_numeric(&traj, omega).unwrap();
            assert_eq!(est.f.norm(), 0.0);
            assert_eq!(est.g.norm(), 0.0);
        }
        let short = bohr_fourier_numeric(&traj, 1.001).unwrap();
        assert!(short.warning.is_some());
        let closed_loop = integrate(&s, &ControlLaw::Weighted, &IntegratorConfig::rk4(0.1, 1.0).unwrap(), 1).unwrap();
        assert!(bohr_fourier_numeric(&closed_loop, 1.0).is_err());
    }

    #[test]
    fn omega_limit_of_constant_and_rotating_runs() {
        let s = target_state(&freqs(&[1.0, 2.0]), &WeightVector::unit(2), Pole::Down).unwrap();
        let traj = integrate(&s, &ControlLaw::FullSum, &IntegratorConfig::rk4(0.1, 10.0).unwrap(), 1).unwrap();
        let lim = omega_limit(&traj, 0.1).unwrap();
        assert_eq!(lim.dispersion, 0.0);
        assert!(lim.converged);
        assert_eq!(lim.pattern, Some(Equilibrium::uniform(2, Pole::Down)));

        let s = EnsembleState::from_vectors(freqs(&[1.0]), WeightVector::unit(1), &[[1.0, 0.0, 0.0]]).unwrap();
        let traj = integrate(&s, &ControlLaw::Zero, &IntegratorConfig::rk4(0.01, 10.0 * TAU).unwrap(), 1).unwrap();
        let lim = omega_limit(&traj, 0.5).unwrap();
        assert!(lim.dispersion > 0.9 && lim.dispersion < 1.1);
        assert!(!lim.converged);
        assert!(lim.pattern.is_none());
        assert!(omega_limit(&traj, 0.0).is_err());
    }

    #[test]
    fn n_bar_values() {
        assert_eq!(n_bar(0.5).unwrap(), 3);
        assert_eq!(n_bar(2.1).unwrap(), 1);
        assert_eq!(n_bar(0.05).unwrap(), 6);
        assert!(n_bar(0.0).is_err());
        assert!(n_bar(-1.0).is_err());
        for eps in [0.3, 0.01, 1e-4] {
            let n = n_bar(eps).unwrap();
            assert!(2f64.powi(-(n as i32) + 1) < eps);
            assert!(n == 1 || 2f64.powi(-(n as i32) + 2) >= eps);
        }
    }

    #[test]
    fn schedule_with_large_ball_starts_at_zero() {
        let s = random_ensemble(4, 4, (1.0, 4.0), (-1.0, -0.95), WeightVector::dyadic(4)).unwrap();
        let cfg = IntegratorConfig::rk4(0.01, 5.0).unwrap();
        let fam = truncated_family(&s, &[1, 2, 3, 4], &cfg, 10).unwrap();
        let sched = convergence_schedule(&fam, 2.1).unwrap();
        assert_eq!(sched.n_bar, 1);
        for e in &sched.entries {
            assert_eq!(e.hitting_time, Some(0.0));
        }
    }

    #[test]
    fn north_pole_start_never_converges() {
        let f = freqs(&[1.3]);
        let w = WeightVector::unit(1);
        let up = target_state(&f, &w, Pole::Up).unwrap();
        let cfg = IntegratorConfig::rk4(0.01, 100.0).unwrap();
        let est = basin_from_states(&[up], &ControlLaw::FullSum, &cfg, -0.99).unwrap();
        assert_eq!(est.converged, 0);
        assert_eq!(est.outcomes[0].max_final_z, 1.0);
        assert!(basin_monte_carlo(&f, &w, &ControlLaw::FullSum, 0, &cfg, -0.99, 1).is_err());
    }

    #[test]
    fn single_spin_basin_is_everything() {
        let f = freqs(&[2.2]);
        let w = WeightVector::unit(1);
        let cfg = IntegratorConfig::rk4(0.01, 100.0).unwrap();
        let est = basin_monte_carlo(&f, &w, &ControlLaw::FullSum, 40, &cfg, -0.99, 5).unwrap();
        assert_eq!(est.fraction, 1.0);
        let again = basin_monte_carlo(&f, &w, &ControlLaw::FullSum, 40, &cfg, -0.99, 5).unwrap();
        assert_eq!(est, again);
    }

    #[test]
    fn streaming_fourier_matches_stored_quadrature() {
        let s0 = random_ensemble(6, 3, (1.0, 4.0), (-1.0, 1.0), WeightVector::unit(3)).unwrap();
        let cfg = IntegratorConfig::rk4(0.01, 300.0).unwrap();
        let traj = integrate(&s0, &ControlLaw::Zero, &cfg, 1).unwrap();
        let omegas = [s0.freqs().as_slice()[1], -0.7, 2.2];
        let streamed = bohr_fourier_free(&s0, &omegas, &cfg).unwrap();
        for (est, &w) in streamed.iter().zip(&omegas) {
            let stored = bohr_fourier_numeric(&traj, w).unwrap();
            assert!((est.f - stored.f).norm() < 1e-10, "{:?} vs {:?}", est.f, stored.f);
            assert!((est.g - stored.g).norm() < 1e-10);
        }
    }

}
