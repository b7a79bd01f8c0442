//! Controlled Bloch vector fields, feedback laws and time integration.
//!
//! Every closed-loop field handled here has the per-spin form
//! `dX_i/dt = sign * omega_i x X_i` with `omega_i = (-u1, u2, e_i)`, where
//! `(u1, u2)` is an effective control shared by all spins. The generator is
//! skew-symmetric, so each spin stays on the unit sphere; the integrators
//! below exploit that either by renormalizing (RK4) or by applying the exact
//! rotation (Lie–Euler with the Rodrigues formula).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::analysis::law_lyapunov_raw;
use crate::ensemble::{ControlValue, EnsembleState, FrequencySet, Pole, SpinState, WeightVector};
use crate::error::{Error, Result};

/// Feedback law closing the loop on the transverse field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ControlLaw {
    /// Free precession.
    Zero,
    /// `u = (sum y_i, sum x_i)`; pairs with unit weights.
    FullSum,
    /// `u = (sum w_i y_i, sum w_i x_i)`.
    Weighted,
    /// Weighted sums over the first `n` spins only.
    Truncated { n: usize },
    /// Radiation-damping back-action of rate `rate`. `Up` is the physical
    /// effect (drives the ensemble to the north pole); `Down` flips the sign
    /// of the whole right-hand side (inverted static field).
    RadiationDamping { rate: f64, sign: Pole },
}

impl ControlLaw {
    pub fn validate(&self, p: usize) -> Result<()> {
        match *self {
            ControlLaw::Truncated { n } if n == 0 || n > p => Err(Error::invalid(
                "truncation",
                format!("truncation order must satisfy 1 <= N <= p = {p}, got {n}"),
            )),
            ControlLaw::RadiationDamping { rate, .. } if !(rate > 0.0 && rate.is_finite()) => {
                Err(Error::invalid("rate", format!("damping rate must be positive, got {rate}")))
            }
            _ => Ok(()),
        }
    }

    /// Whether the law is one of the stabilizing feedbacks with
    /// `dV/dt = -|u|^2`.
    pub fn is_stabilizing_feedback(&self) -> bool {
        matches!(
            self,
            ControlLaw::FullSum | ControlLaw::Weighted | ControlLaw::Truncated { .. }
        )
    }
}

impl fmt::Display for ControlLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlLaw::Zero => write!(f, "zero"),
            ControlLaw::FullSum => write!(f, "full-sum"),
            ControlLaw::Weighted => write!(f, "weighted"),
            ControlLaw::Truncated { n } => write!(f, "truncated({n})"),
            ControlLaw::RadiationDamping { rate, sign } => {
                write!(f, "radiation-damping(rate={rate}, sign={sign})")
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Classical four-stage Runge–Kutta, then per-spin renormalization.
    Rk4Renormalized,
    /// Control frozen over the step; each spin rotated exactly.
    LieEulerRodrigues,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorConfig {
    pub method: Method,
    pub h: f64,
    pub t_final: f64,
}

impl IntegratorConfig {
    pub const DEFAULT_STEP: f64 = 0.01;

    pub fn new(method: Method, h: f64, t_final: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::invalid("h", format!("step must be positive, got {h}")));
        }
        if !(t_final >= h && t_final.is_finite()) {
            return Err(Error::invalid(
                "t_final",
                format!("final time must be at least one step ({h}), got {t_final}"),
            ));
        }
        Ok(Self { method, h, t_final })
    }

    pub fn rk4(h: f64, t_final: f64) -> Result<Self> {
        Self::new(Method::Rk4Renormalized, h, t_final)
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.h).round().max(1.0) as usize
    }
}

/// Saturation levels of the globally Lipschitz extension of the field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutoffParams {
    a: f64,
    b: f64,
}

impl CutoffParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 1.0) {
            return Err(Error::invalid("a", format!("state cut radius must exceed 1, got {a}")));
        }
        if !(b > 1.0) {
            return Err(Error::invalid("b", format!("control cut level must exceed 1, got {b}")));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Scalar saturation at `±b`.
    pub fn phi(&self, x: f64) -> f64 {
        x.clamp(-self.b, self.b)
    }

    /// Radial saturation at radius `a`.
    pub fn psi(&self, v: [f64; 3]) -> [f64; 3] {
        let n = crate::ensemble::norm3(v);
        if n <= self.a {
            v
        } else {
            let s = self.a / n;
            [v[0] * s, v[1] * s, v[2] * s]
        }
    }
}

impl Default for CutoffParams {
    fn default() -> Self {
        Self { a: 2.0, b: 2.0 }
    }
}

/// Time derivative of an ensemble, one 3-vector per spin.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentCollection(Vec<[f64; 3]>);

impl TangentCollection {
    pub fn as_slice(&self) -> &[[f64; 3]] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    /// `max_i |<X_i, dX_i/dt>|`.
    pub fn max_radial_component(&self, s: &EnsembleState) -> f64 {
        self.0
            .iter()
            .zip(s.spins())
            .map(|(t, x)| (t[0] * x.x() + t[1] * x.y() + t[2] * x.z()).abs())
            .fold(0.0, f64::max)
    }
}

/// Sampled closed-loop trajectory.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub freqs: FrequencySet,
    pub weights: WeightVector,
    pub law: ControlLaw,
    pub times: Vec<f64>,
    pub spins: Vec<Vec<SpinState>>,
    pub controls: Vec<ControlValue>,
    pub lyapunov: Vec<f64>,
    pub sample_stride: usize,
    pub h: f64,
    /// Max of `|‖X_i‖ - 1|` over every step, not just samples.
    pub max_norm_drift: f64,
    /// Max of `V(t_{k+1}) - V(t_k)` over every step.
    pub max_lyapunov_increase: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> EnsembleState {
        EnsembleState::new(self.freqs.clone(), self.weights.clone(), self.spins[k].clone())
            .expect("trajectory samples share the ensemble layout")
    }

    pub fn final_state(&self) -> EnsembleState {
        self.state(self.len() - 1)
    }

    pub fn t_final(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    /// `z_i` over the samples.
    pub fn z_series(&self, i: usize) -> Vec<f64> {
        self.spins.iter().map(|s| s[i].z()).collect()
    }
}

fn transverse_sums(vs: &[[f64; 3]], weights: Option<&[f64]>, n: usize) -> (f64, f64) {
    let mut sx = 0.0;
    let mut sy = 0.0;
    match weights {
        None => {
            for v in &vs[..n] {
                sx += v[0];
                sy += v[1];
            }
        }
        Some(w) => {
            for (v, wi) in vs[..n].iter().zip(w) {
                sx += wi * v[0];
                sy += wi * v[1];
            }
        }
    }
    (sx, sy)
}

pub(crate) fn control_raw(law: &ControlLaw, weights: &[f64], vs: &[[f64; 3]]) -> ControlValue {
    let p = vs.len();
    match *law {
        ControlLaw::Zero => ControlValue::ZERO,
        ControlLaw::FullSum => {
            let (sx, sy) = transverse_sums(vs, None, p);
            ControlValue::new(sy, sx)
        }
        ControlLaw::Weighted => {
            let (sx, sy) = transverse_sums(vs, Some(weights), p);
            ControlValue::new(sy, sx)
        }
        ControlLaw::Truncated { n } => {
            let (sx, sy) = transverse_sums(vs, Some(weights), n);
            ControlValue::new(sy, sx)
        }
        ControlLaw::RadiationDamping { .. } => {
            let (sx, sy) = transverse_sums(vs, None, p);
            ControlValue::new(sy / p as f64, sx / p as f64)
        }
    }
}

/// Effective control and overall sign of the closed-loop generator.
fn generator(law: &ControlLaw, weights: &[f64], vs: &[[f64; 3]]) -> (f64, ControlValue) {
    let u = control_raw(law, weights, vs);
    match *law {
        ControlLaw::RadiationDamping { rate, sign } => (
            sign.sign(),
            ControlValue::new(-rate * u.u1, -rate * u.u2),
        ),
        _ => (1.0, u),
    }
}

#[inline]
fn bloch_field(e: f64, u: ControlValue, v: [f64; 3]) -> [f64; 3] {
    [
        -e * v[1] + u.u2 * v[2],
        e * v[0] + u.u1 * v[2],
        -u.u2 * v[0] - u.u1 * v[1],
    ]
}

fn closed_loop_field(
    law: &ControlLaw,
    freqs: &[f64],
    weights: &[f64],
    vs: &[[f64; 3]],
    out: &mut [[f64; 3]],
) {
    let (sign, u) = generator(law, weights, vs);
    for ((o, v), &e) in out.iter_mut().zip(vs).zip(freqs) {
        let f = bloch_field(e, u, *v);
        *o = [sign * f[0], sign * f[1], sign * f[2]];
    }
}

/// Feedback value for `law` at state `s`. For radiation damping this is the
/// pair of ensemble averages `(mean y, mean x)`.
pub fn control_value(law: &ControlLaw, s: &EnsembleState) -> Result<ControlValue> {
    law.validate(s.len())?;
    Ok(control_raw(law, s.weights().as_slice(), &s.vectors()))
}

/// Open-loop Bloch field for a given control.
pub fn bloch_rhs(s: &EnsembleState, u: ControlValue) -> TangentCollection {
    TangentCollection(
        s.spins()
            .iter()
            .zip(s.freqs().as_slice())
            .map(|(x, &e)| bloch_field(e, u, x.to_array()))
            .collect(),
    )
}

/// Closed-loop field for any law.
pub fn closed_loop_rhs(law: &ControlLaw, s: &EnsembleState) -> Result<TangentCollection> {
    law.validate(s.len())?;
    let vs = s.vectors();
    let mut out = vec![[0.0; 3]; vs.len()];
    closed_loop_field(law, s.freqs().as_slice(), s.weights().as_slice(), &vs, &mut out);
    Ok(TangentCollection(out))
}

/// Saturated weighted-feedback field on the ambient space `(R^3)^p`.
///
/// `F_i(X) = e_i A psi(X_i) + phi(sum_j w_j x_j) B psi(X_i) + phi(sum_j w_j y_j) C psi(X_i)`
/// where `A`, `B`, `C` generate rotations about z, y and x respectively.
pub fn cutoff_rhs(
    raw: &[[f64; 3]],
    freqs: &FrequencySet,
    weights: &WeightVector,
    params: &CutoffParams,
) -> Result<TangentCollection> {
    let p = raw.len();
    if freqs.len() != p {
        return Err(Error::LengthMismatch {
            what: "freqs",
            expected: p,
            got: freqs.len(),
        });
    }
    if weights.len() != p {
        return Err(Error::LengthMismatch {
            what: "weights",
            expected: p,
            got: weights.len(),
        });
    }
    let (sx, sy) = transverse_sums(raw, Some(weights.as_slice()), p);
    let u2 = params.phi(sx);
    let u1 = params.phi(sy);
    Ok(TangentCollection(
        raw.iter()
            .zip(freqs.as_slice())
            .map(|(v, &e)| {
                let [x, y, z] = params.psi(*v);
                // A psi = (-y, x, 0), B psi = (z, 0, -x), C psi = (0, z, -y)
                [e * -y + u2 * z, e * x + u1 * z, -u2 * x - u1 * y]
            })
            .collect(),
    ))
}

/// Bloch field with radiation-damping back-action:
/// `x' = -e y - l z X`, `y' = e x - l z Y`, `z' = l (x X + y Y)` with
/// `(X, Y)` the ensemble mean; `Pole::Down` negates the field.
pub fn rde_rhs(s: &EnsembleState, rate: f64, sign: Pole) -> Result<TangentCollection> {
    closed_loop_rhs(&ControlLaw::RadiationDamping { rate, sign }, s)
}

/// Rotation of `v` by `exp(h [omega]_x)`.
#[inline]
fn rodrigues(omega: [f64; 3], h: f64, v: [f64; 3]) -> [f64; 3] {
    let n = crate::ensemble::norm3(omega);
    let theta = h * n;
    if theta == 0.0 {
        return v;
    }
    let k = [omega[0] / n, omega[1] / n, omega[2] / n];
    let (s, c) = theta.sin_cos();
    let kxv = [
        k[1] * v[2] - k[2] * v[1],
        k[2] * v[0] - k[0] * v[2],
        k[0] * v[1] - k[1] * v[0],
    ];
    let kdv = k[0] * v[0] + k[1] * v[1] + k[2] * v[2];
    [
        v[0] * c + kxv[0] * s + k[0] * kdv * (1.0 - c),
        v[1] * c + kxv[1] * s + k[1] * kdv * (1.0 - c),
        v[2] * c + kxv[2] * s + k[2] * kdv * (1.0 - c),
    ]
}

/// Reusable buffers for stepping one trajectory.
struct Stepper<'a> {
    law: ControlLaw,
    freqs: &'a [f64],
    weights: &'a [f64],
    k: [Vec<[f64; 3]>; 4],
    tmp: Vec<[f64; 3]>,
}

impl<'a> Stepper<'a> {
    fn new(law: ControlLaw, freqs: &'a [f64], weights: &'a [f64]) -> Self {
        let p = freqs.len();
        Self {
            law,
            freqs,
            weights,
            k: std::array::from_fn(|_| vec![[0.0; 3]; p]),
            tmp: vec![[0.0; 3]; p],
        }
    }

    fn step(&mut self, method: Method, h: f64, x: &mut [[f64; 3]]) {
        match method {
            Method::Rk4Renormalized => self.rk4(h, x),
            Method::LieEulerRodrigues => self.lie_euler(h, x),
        }
    }

    fn rk4(&mut self, h: f64, x: &mut [[f64; 3]]) {
        let (law, freqs, weights) = (self.law, self.freqs, self.weights);
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;

        closed_loop_field(&law, freqs, weights, x, k1);
        axpy(tmp, x, 0.5 * h, k1);
        closed_loop_field(&law, freqs, weights, tmp, k2);
        axpy(tmp, x, 0.5 * h, k2);
        closed_loop_field(&law, freqs, weights, tmp, k3);
        axpy(tmp, x, h, k3);
        closed_loop_field(&law, freqs, weights, tmp, k4);

        let c = h / 6.0;
        for i in 0..x.len() {
            let mut v = [0.0; 3];
            for d in 0..3 {
                v[d] = x[i][d] + c * (k1[i][d] + 2.0 * k2[i][d] + 2.0 * k3[i][d] + k4[i][d]);
            }
            let n = crate::ensemble::norm3(v);
            x[i] = [v[0] / n, v[1] / n, v[2] / n];
        }
    }

    fn lie_euler(&mut self, h: f64, x: &mut [[f64; 3]]) {
        let (sign, u) = generator(&self.law, self.weights, x);
        for (v, &e) in x.iter_mut().zip(self.freqs) {
            let omega = [-sign * u.u1, sign * u.u2, sign * e];
            *v = rodrigues(omega, h, *v);
        }
    }
}

fn axpy(out: &mut [[f64; 3]], x: &[[f64; 3]], a: f64, k: &[[f64; 3]]) {
    for ((o, xi), ki) in out.iter_mut().zip(x).zip(k) {
        *o = [xi[0] + a * ki[0], xi[1] + a * ki[1], xi[2] + a * ki[2]];
    }
}

fn drift(x: &[[f64; 3]]) -> f64 {
    x.iter()
        .map(|v| (crate::ensemble::norm3(*v) - 1.0).abs())
        .fold(0.0, f64::max)
}

/// One integrator step of the closed loop.
pub fn step(s: &EnsembleState, law: &ControlLaw, cfg: &IntegratorConfig) -> Result<EnsembleState> {
    law.validate(s.len())?;
    let mut x = s.vectors();
    let mut stepper = Stepper::new(*law, s.freqs().as_slice(), s.weights().as_slice());
    stepper.step(cfg.method, cfg.h, &mut x);
    Ok(s.with_unit_vectors(&x))
}

/// Integrates to `cfg.t_final`, keeping every `stride`-th step plus the
/// initial and final states.
pub fn integrate(
    s0: &EnsembleState,
    law: &ControlLaw,
    cfg: &IntegratorConfig,
    stride: usize,
) -> Result<Trajectory> {
    if stride == 0 {
        return Err(Error::invalid("stride", "sample stride must be at least 1"));
    }
    law.validate(s0.len())?;
    let freqs = s0.freqs().as_slice();
    let weights = s0.weights().as_slice();
    let n_steps = cfg.n_steps();
    let n_samples = n_steps / stride + 2;

    let mut traj = Trajectory {
        freqs: s0.freqs().clone(),
        weights: s0.weights().clone(),
        law: *law,
        times: Vec::with_capacity(n_samples),
        spins: Vec::with_capacity(n_samples),
        controls: Vec::with_capacity(n_samples),
        lyapunov: Vec::with_capacity(n_samples),
        sample_stride: stride,
        h: cfg.h,
        max_norm_drift: 0.0,
        max_lyapunov_increase: f64::NEG_INFINITY,
    };

    let mut x = s0.vectors();
    let mut v_prev = law_lyapunov_raw(law, weights, &x);
    let record = |traj: &mut Trajectory, k: usize, x: &[[f64; 3]], v: f64| {
        traj.times.push(k as f64 * cfg.h);
        traj.spins.push(x.iter().map(|&a| SpinState::from_unit(a)).collect());
        traj.controls.push(control_raw(law, weights, x));
        traj.lyapunov.push(v);
    };
    traj.max_norm_drift = drift(&x);
    record(&mut traj, 0, &x, v_prev);

    let mut stepper = Stepper::new(*law, freqs, weights);
    for k in 1..=n_steps {
        stepper.step(cfg.method, cfg.h, &mut x);
        let v = law_lyapunov_raw(law, weights, &x);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                step: k,
                time: k as f64 * cfg.h,
            });
        }
        traj.max_lyapunov_increase = traj.max_lyapunov_increase.max(v - v_prev);
        traj.max_norm_drift = traj.max_norm_drift.max(drift(&x));
        v_prev = v;
        if k % stride == 0 || k == n_steps {
            record(&mut traj, k, &x, v);
        }
    }
    Ok(traj)
}

/// Final state only, without storing samples.
pub fn integrate_final(
    s0: &EnsembleState,
    law: &ControlLaw,
    cfg: &IntegratorConfig,
) -> Result<EnsembleState> {
    law.validate(s0.len())?;
    let mut x = s0.vectors();
    let mut stepper = Stepper::new(*law, s0.freqs().as_slice(), s0.weights().as_slice());
    for k in 1..=cfg.n_steps() {
        stepper.step(cfg.method, cfg.h, &mut x);
        if k % 1024 == 0 && x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: k,
                time: k as f64 * cfg.h,
            });
        }
    }
    Ok(s0.with_unit_vectors(&x))
}

/// Integrates to `cfg.t_final`, handing `(step, time, spin vectors)` to
/// `visit` at step 0 and after every step. Nothing is stored.
pub fn integrate_with<F>(s0: &EnsembleState, law: &ControlLaw, cfg: &IntegratorConfig, mut visit: F) -> Result<EnsembleState>
where
    F: FnMut(usize, f64, &[[f64; 3]]),
{
    law.validate(s0.len())?;
    let mut x = s0.vectors();
    let mut stepper = Stepper::new(*law, s0.freqs().as_slice(), s0.weights().as_slice());
    visit(0, 0.0, &x);
    for k in 1..=cfg.n_steps() {
        stepper.step(cfg.method, cfg.h, &mut x);
        if k % 1024 == 0 && x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: k,
                time: k as f64 * cfg.h,
            });
        }
        visit(k, k as f64 * cfg.h, &x);
    }
    Ok(s0.with_unit_vectors(&x))
}
