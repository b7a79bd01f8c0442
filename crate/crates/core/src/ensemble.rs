//! Ensemble state types, sphere geometry, the weighted product metric and
//! seeded random sampling.
//!
//! Randomness always flows through [`stream_rng`]: a ChaCha8 generator keyed
//! by the user seed, with the 64-bit stream id selecting an independent
//! substream. Fixed stream ids are listed in [`streams`]; Monte-Carlo sample
//! `k` uses stream `streams::SAMPLE_BASE + k`. ChaCha output and the `rand`
//! uniform-float conversion are both platform independent, so a seed pins the
//! exact bit pattern of every sampled state.

use std::f64::consts::TAU;
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spins are unit vectors to within this tolerance.
pub const NORM_TOLERANCE: f64 = 1e-9;

pub mod streams {
    pub const FREQUENCIES: u64 = 0;
    pub const SPINS: u64 = 1;
    pub const SAMPLE_BASE: u64 = 1 << 32;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One of the two poles of the Bloch sphere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pole {
    Down,
    Up,
}

impl Pole {
    pub fn sign(self) -> f64 {
        match self {
            Pole::Down => -1.0,
            Pole::Up => 1.0,
        }
    }

    pub fn from_sign(sign: i32) -> Result<Self> {
        match sign {
            -1 => Ok(Pole::Down),
            1 => Ok(Pole::Up),
            other => Err(Error::invalid("sign", format!("expected -1 or +1, got {other}"))),
        }
    }
}

impl fmt::Display for Pole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pole::Down => "-1",
            Pole::Up => "+1",
        })
    }
}

/// A magnetization vector on the unit sphere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpinState {
    x: f64,
    y: f64,
    z: f64,
}

impl SpinState {
    /// Scales `(x, y, z)` onto the unit sphere.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (x * x + y * y + z * z).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::ZeroVector);
        }
        Ok(Self {
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    pub fn pole(pole: Pole) -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            z: pole.sign(),
        }
    }

    /// Caller guarantees `v` is already unit length (e.g. an exact rotation
    /// of a unit vector).
    pub(crate) fn from_unit(v: [f64; 3]) -> Self {
        Self {
            x: v[0],
            y: v[1],
            z: v[2],
        }
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        norm3(self.to_array())
    }

    pub fn distance(&self, other: &SpinState) -> f64 {
        norm3([self.x - other.x, self.y - other.y, self.z - other.z])
    }
}

/// Free-function form of [`SpinState::new`].
pub fn make_spin(x: f64, y: f64, z: f64) -> Result<SpinState> {
    SpinState::new(x, y, z)
}

pub(crate) fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Larmor frequencies of the ensemble members, in index order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FrequencySet(Vec<f64>);

impl FrequencySet {
    pub fn new(freqs: Vec<f64>) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::invalid("freqs", "at least one frequency is required"));
        }
        if freqs.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid("freqs", "frequencies must be finite"));
        }
        Ok(Self(freqs))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Smallest pairwise separation `min_{i<j} |e_i - e_j|`; infinite for a
    /// single frequency.
    pub fn min_gap(&self) -> f64 {
        let mut sorted = self.0.clone();
        sorted.sort_by(f64::total_cmp);
        sorted
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, e| m.max(e.abs()))
    }

    /// Leading `n` frequencies.
    pub fn truncate(&self, n: usize) -> Result<Self> {
        Self::new(self.0[..n.min(self.0.len())].to_vec())
    }
}

/// Positive per-spin weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::invalid("weights", "at least one weight is required"));
        }
        if let Some(bad) = w.iter().find(|&&wi| !(wi > 0.0 && wi.is_finite())) {
            return Err(Error::invalid("weights", format!("weights must be positive, got {bad}")));
        }
        Ok(Self(w))
    }

    pub fn unit(p: usize) -> Self {
        Self(vec![1.0; p.max(1)])
    }

    /// `w_i = base^{-i}` for `i = 1..=p`.
    pub fn geometric(p: usize, base: f64) -> Result<Self> {
        if !(base > 1.0) {
            return Err(Error::invalid("base", format!("geometric base must exceed 1, got {base}")));
        }
        Self::new((1..=p as i32).map(|i| base.powi(-i)).collect())
    }

    /// `w_i = 2^{-i}`.
    pub fn dyadic(p: usize) -> Self {
        Self((1..=p as i32).map(|i| 2f64.powi(-i)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn is_unit(&self) -> bool {
        self.0.iter().all(|&w| w == 1.0)
    }
}

/// Frequencies, weights and one spin per frequency.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleState {
    freqs: FrequencySet,
    weights: WeightVector,
    spins: Vec<SpinState>,
}

impl EnsembleState {
    pub fn new(freqs: FrequencySet, weights: WeightVector, spins: Vec<SpinState>) -> Result<Self> {
        let p = freqs.len();
        if weights.len() != p {
            return Err(Error::LengthMismatch {
                what: "weights",
                expected: p,
                got: weights.len(),
            });
        }
        if spins.len() != p {
            return Err(Error::LengthMismatch {
                what: "spins",
                expected: p,
                got: spins.len(),
            });
        }
        Ok(Self {
            freqs,
            weights,
            spins,
        })
    }

    /// Builds a state from raw vectors, normalizing each onto the sphere.
    pub fn from_vectors(
        freqs: FrequencySet,
        weights: WeightVector,
        vectors: &[[f64; 3]],
    ) -> Result<Self> {
        let spins = vectors
            .iter()
            .map(|v| SpinState::new(v[0], v[1], v[2]))
            .collect::<Result<Vec<_>>>()?;
        Self::new(freqs, weights, spins)
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    pub fn freqs(&self) -> &FrequencySet {
        &self.freqs
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn spins(&self) -> &[SpinState] {
        &self.spins
    }

    pub fn vectors(&self) -> Vec<[f64; 3]> {
        self.spins.iter().map(|s| s.to_array()).collect()
    }

    /// Same frequencies and weights, new spins.
    pub fn with_spins(&self, spins: Vec<SpinState>) -> Result<Self> {
        Self::new(self.freqs.clone(), self.weights.clone(), spins)
    }

    /// Same frequencies and spins, new weights.
    pub fn with_weights(&self, weights: WeightVector) -> Result<Self> {
        Self::new(self.freqs.clone(), weights, self.spins.clone())
    }

    pub(crate) fn with_unit_vectors(&self, vectors: &[[f64; 3]]) -> Self {
        debug_assert_eq!(vectors.len(), self.spins.len());
        Self {
            freqs: self.freqs.clone(),
            weights: self.weights.clone(),
            spins: vectors.iter().map(|&v| SpinState::from_unit(v)).collect(),
        }
    }

    pub fn max_norm_drift(&self) -> f64 {
        self.spins
            .iter()
            .map(|s| (s.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Transverse field components `(u1, u2)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ControlValue {
    pub u1: f64,
    pub u2: f64,
}

impl ControlValue {
    pub const ZERO: ControlValue = ControlValue { u1: 0.0, u2: 0.0 };

    pub fn new(u1: f64, u2: f64) -> Self {
        Self { u1, u2 }
    }

    pub fn norm_sq(&self) -> f64 {
        self.u1 * self.u1 + self.u2 * self.u2
    }
}

/// `sum_i w_i |a_i - b_i|` over the shared weights.
pub fn weighted_distance(a: &EnsembleState, b: &EnsembleState) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            what: "second state",
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.weights != b.weights {
        return Err(Error::Precondition(
            "states being compared must share the same weights".into(),
        ));
    }
    Ok(a
        .spins
        .iter()
        .zip(&b.spins)
        .zip(a.weights.as_slice())
        .map(|((sa, sb), w)| w * sa.distance(sb))
        .sum())
}

/// Every spin at `pole`.
pub fn target_state(freqs: &FrequencySet, weights: &WeightVector, pole: Pole) -> Result<EnsembleState> {
    EnsembleState::new(
        freqs.clone(),
        weights.clone(),
        vec![SpinState::pole(pole); freqs.len()],
    )
}

/// `p` distinct frequencies uniform in `[lo, hi]`.
pub fn random_frequencies<R: Rng>(rng: &mut R, p: usize, interval: (f64, f64)) -> Result<FrequencySet> {
    let (lo, hi) = interval;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(
            "freq_interval",
            format!("need lo < hi, got [{lo}, {hi}]"),
        ));
    }
    if p == 0 {
        return Err(Error::invalid("p", "ensemble must contain at least one spin"));
    }
    let mut out: Vec<f64> = Vec::with_capacity(p);
    while out.len() < p {
        let e = rng.random_range(lo..=hi);
        if !out.contains(&e) {
            out.push(e);
        }
    }
    FrequencySet::new(out)
}

/// A spin with `z` uniform in `z_range` and azimuth uniform on the circle.
///
/// With `z_range = (-1, 1)` this is the uniform (Haar) measure on the sphere.
pub fn random_spin<R: Rng>(rng: &mut R, z_range: (f64, f64)) -> Result<SpinState> {
    let (zlo, zhi) = z_range;
    if !(-1.0..=1.0).contains(&zlo) || !(-1.0..=1.0).contains(&zhi) || zlo > zhi {
        return Err(Error::invalid(
            "z_range",
            format!("need -1 <= zlo <= zhi <= 1, got [{zlo}, {zhi}]"),
        ));
    }
    let z = if zlo == zhi { zlo } else { rng.random_range(zlo..=zhi) };
    let phi = rng.random_range(0.0..TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    Ok(SpinState::from_unit([r * phi.cos(), r * phi.sin(), z]))
}

pub fn random_spins<R: Rng>(rng: &mut R, p: usize, z_range: (f64, f64)) -> Result<Vec<SpinState>> {
    (0..p).map(|_| random_spin(rng, z_range)).collect()
}

/// Seeded random ensemble: frequencies from stream
/// [`streams::FREQUENCIES`], spins from stream [`streams::SPINS`].
pub fn random_ensemble(
    seed: u64,
    p: usize,
    freq_interval: (f64, f64),
    z_range: (f64, f64),
    weights: WeightVector,
) -> Result<EnsembleState> {
    if weights.len() != p {
        return Err(Error::LengthMismatch {
            what: "weights",
            expected: p,
            got: weights.len(),
        });
    }
    let freqs = random_frequencies(&mut stream_rng(seed, streams::FREQUENCIES), p, freq_interval)?;
    let spins = random_spins(&mut stream_rng(seed, streams::SPINS), p, z_range)?;
    EnsembleState::new(freqs, weights, spins)
}
