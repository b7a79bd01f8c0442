//! Scenario files.
//!
//! A scenario is a TOML document. Top-level keys describe the ensemble,
//! sections configure the weights, the feedback law, the integrator, the
//! output files and the per-command extras:
//!
//! ```toml
//! seed = 7
//! p = 30
//! freq_interval = [1.0, 4.0]
//! z0_range = [0.8, 1.0]
//! z_threshold = -0.99
//!
//! [weights]
//! scheme = "geometric"
//! base = 1.1
//!
//! [law]
//! kind = "weighted"
//!
//! [integrator]
//! method = "rk4-renormalized"
//! h = 0.01
//! t_final = 20000.0
//! stride = 100
//!
//! [outputs]
//! dir = "out"
//! trajectory_csv = "trajectory.csv"
//! summary = "summary.toml"
//! svg = "plot.svg"
//! ```
//!
//! `freqs = [...]` and `initial = [[x, y, z], ...]` replace the seeded draws.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlLaw, IntegratorConfig, Method};
use crate::ensemble::{
    random_frequencies, random_spins, stream_rng, streams, EnsembleState, FrequencySet, Pole,
    SpinState, WeightVector,
};
use crate::error::{Error, Result};
use crate::spectral::{Equilibrium, MAX_ENUMERATION_SIZE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub p: usize,
    #[serde(default = "default_freq_interval")]
    pub freq_interval: [f64; 2],
    #[serde(default = "default_z0_range")]
    pub z0_range: [f64; 2],
    #[serde(default = "default_z_threshold")]
    pub z_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freqs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<[f64; 3]>>,
    #[serde(default)]
    pub weights: WeightScheme,
    #[serde(default = "default_law")]
    pub law: ControlLaw,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub outputs: OutputSection,
    #[serde(default)]
    pub spectrum: SpectrumSection,
    #[serde(default)]
    pub basin: BasinSection,
    #[serde(default)]
    pub truncated: TruncatedSection,
    #[serde(default)]
    pub fourier: FourierSection,
}

fn default_freq_interval() -> [f64; 2] {
    [1.0, 4.0]
}

fn default_z0_range() -> [f64; 2] {
    [0.8, 1.0]
}

fn default_z_threshold() -> f64 {
    -0.99
}

fn default_law() -> ControlLaw {
    ControlLaw::FullSum
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightScheme {
    #[default]
    Unit,
    /// `w_i = base^{-i}`, `i = 1..p`.
    Geometric { base: f64 },
    /// `w_i = 2^{-i}`.
    Dyadic,
}

impl WeightScheme {
    pub fn materialize(&self, p: usize) -> Result<WeightVector> {
        match *self {
            WeightScheme::Unit => Ok(WeightVector::unit(p)),
            WeightScheme::Geometric { base } => WeightVector::geometric(p, base)
                .map_err(|e| Error::config("weights.base", e.to_string())),
            WeightScheme::Dyadic => Ok(WeightVector::dyadic(p)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSection {
    pub method: Method,
    pub h: f64,
    pub t_final: f64,
    pub stride: usize,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        Self {
            method: Method::Rk4Renormalized,
            h: IntegratorConfig::DEFAULT_STEP,
            t_final: 20000.0,
            stride: 100,
        }
    }
}

impl IntegratorSection {
    pub fn config(&self) -> Result<IntegratorConfig> {
        IntegratorConfig::new(self.method, self.h, self.t_final)
            .map_err(|e| Error::config("integrator", e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub trajectory_csv: String,
    pub summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svg: Option<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            trajectory_csv: "trajectory.csv".into(),
            summary: "summary.toml".into(),
            svg: None,
        }
    }
}

impl OutputSection {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

/// Which equilibria a spectrum report covers.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum Selection {
    #[default]
    All,
    Down,
    Up,
    Pattern(Vec<Pole>),
}

impl Selection {
    pub fn equilibria(&self, p: usize) -> Result<Vec<Equilibrium>> {
        match self {
            Selection::All => crate::spectral::enumerate_equilibria(p),
            Selection::Down => Ok(vec![Equilibrium::uniform(p, Pole::Down)]),
            Selection::Up => Ok(vec![Equilibrium::uniform(p, Pole::Up)]),
            Selection::Pattern(signs) if signs.len() != p => Err(Error::config(
                "spectrum.which",
                format!("pattern has {} signs but p = {p}", signs.len()),
            )),
            Selection::Pattern(signs) => Ok(vec![Equilibrium::new(signs.clone())]),
        }
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selection::All => f.write_str("all"),
            Selection::Down => f.write_str("down"),
            Selection::Up => f.write_str("up"),
            Selection::Pattern(signs) => {
                let parts: Vec<String> = signs.iter().map(Pole::to_string).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

impl FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all" => Ok(Selection::All),
            "down" => Ok(Selection::Down),
            "up" => Ok(Selection::Up),
            other => {
                let body = other.trim_start_matches('(').trim_end_matches(')');
                body.split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<i32>()
                            .map_err(|_| ())
                            .and_then(|v| Pole::from_sign(v).map_err(|_| ()))
                    })
                    .collect::<std::result::Result<Vec<_>, ()>>()
                    .map(Selection::Pattern)
                    .map_err(|_| {
                        Error::config(
                            "spectrum.which",
                            format!("expected all, down, up or a sign list like +1,-1,-1; got `{s}`"),
                        )
                    })
            }
        }
    }
}

impl Serialize for Selection {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Selection {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSection {
    pub which: Selection,
    pub report_csv: String,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self {
            which: Selection::All,
            report_csv: "spectrum.csv".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasinSection {
    pub samples: usize,
    pub outcomes_csv: String,
}

impl Default for BasinSection {
    fn default() -> Self {
        Self {
            samples: 100,
            outcomes_csv: "basin.csv".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruncatedSection {
    pub epsilon: f64,
    /// Defaults to the smallest admissible order for `epsilon`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_min: Option<usize>,
    /// Defaults to `p`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    pub schedule_csv: String,
}

impl Default for TruncatedSection {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            n_min: None,
            n_max: None,
            schedule_csv: "schedule.csv".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FourierSection {
    /// Extra probe frequencies away from `±e_i`.
    pub off_grid: Vec<f64>,
    pub coefficients_csv: String,
}

impl Default for FourierSection {
    fn default() -> Self {
        Self {
            off_grid: Vec::new(),
            coefficients_csv: "fourier.csv".into(),
        }
    }
}

fn interval(field: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(Error::config(field, format!("expected [lo, hi] with lo <= hi, got {r:?}")));
    }
    Ok(())
}

impl ScenarioConfig {
    /// Defaults for a `p`-spin full-sum run.
    pub fn new(seed: u64, p: usize) -> Self {
        Self {
            seed,
            p,
            freq_interval: default_freq_interval(),
            z0_range: default_z0_range(),
            z_threshold: default_z_threshold(),
            freqs: None,
            initial: None,
            weights: WeightScheme::Unit,
            law: default_law(),
            integrator: IntegratorSection::default(),
            outputs: OutputSection::default(),
            spectrum: SpectrumSection::default(),
            basin: BasinSection::default(),
            truncated: TruncatedSection::default(),
            fourier: FourierSection::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| text[..s.start].lines().count().max(1))
                .map_or_else(|| "<document>".to_string(), |line| format!("line {line}"));
            Error::config(field, e.message().to_string())
        })?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<document>", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Checks every field without drawing random numbers.
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::config("p", "ensemble needs at least one spin"));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::config("seed", "must fit in a signed 64-bit integer"));
        }
        interval("freq_interval", self.freq_interval)?;
        interval("z0_range", self.z0_range)?;
        if self.z0_range[0] < -1.0 || self.z0_range[1] > 1.0 {
            return Err(Error::config("z0_range", "must lie within [-1, 1]"));
        }
        if !(self.z_threshold > -1.0 && self.z_threshold < 0.0) {
            return Err(Error::config("z_threshold", "must lie in (-1, 0)"));
        }
        if let Some(f) = &self.freqs {
            if f.len() != self.p {
                return Err(Error::config("freqs", format!("has {} entries, p = {}", f.len(), self.p)));
            }
            FrequencySet::new(f.clone()).map_err(|e| Error::config("freqs", e.to_string()))?;
        }
        if let Some(init) = &self.initial {
            if init.len() != self.p {
                return Err(Error::config(
                    "initial",
                    format!("has {} spins, p = {}", init.len(), self.p),
                ));
            }
            for (i, v) in init.iter().enumerate() {
                SpinState::new(v[0], v[1], v[2])
                    .map_err(|e| Error::config(format!("initial[{i}]"), e.to_string()))?;
            }
        }
        self.weights.materialize(self.p)?;
        self.law
            .validate(self.p)
            .map_err(|e| Error::config("law", e.to_string()))?;
        self.integrator.config()?;
        if self.integrator.stride == 0 {
            return Err(Error::config("integrator.stride", "must be at least 1"));
        }
        if self.basin.samples == 0 {
            return Err(Error::config("basin.samples", "need at least one sample"));
        }
        let eps = self.truncated.epsilon;
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::config("truncated.epsilon", format!("must be positive, got {eps}")));
        }
        if let (Some(lo), Some(hi)) = (self.truncated.n_min, self.truncated.n_max) {
            if lo > hi {
                return Err(Error::config("truncated.n_min", "exceeds truncated.n_max"));
            }
        }
        for (name, n) in [("truncated.n_min", self.truncated.n_min), ("truncated.n_max", self.truncated.n_max)] {
            if let Some(n) = n {
                if n == 0 || n > self.p {
                    return Err(Error::config(name, format!("must satisfy 1 <= N <= p = {}", self.p)));
                }
            }
        }
        if self.fourier.off_grid.iter().any(|w| !w.is_finite()) {
            return Err(Error::config("fourier.off_grid", "entries must be finite"));
        }
        Ok(())
    }

    /// Checks needed only by the spectrum command.
    pub fn validate_spectrum(&self) -> Result<()> {
        if self.spectrum.which == Selection::All && self.p > MAX_ENUMERATION_SIZE {
            return Err(Error::config(
                "spectrum.which",
                format!("`all` enumerates 2^p equilibria; p = {} exceeds {MAX_ENUMERATION_SIZE}", self.p),
            ));
        }
        if let Selection::Pattern(signs) = &self.spectrum.which {
            if signs.len() != self.p {
                return Err(Error::config(
                    "spectrum.which",
                    format!("pattern has {} signs but p = {}", signs.len(), self.p),
                ));
            }
        }
        Ok(())
    }

    pub fn frequencies(&self) -> Result<FrequencySet> {
        match &self.freqs {
            Some(f) => FrequencySet::new(f.clone()),
            None => random_frequencies(
                &mut stream_rng(self.seed, streams::FREQUENCIES),
                self.p,
                (self.freq_interval[0], self.freq_interval[1]),
            ),
        }
    }

    pub fn weight_vector(&self) -> Result<WeightVector> {
        self.weights.materialize(self.p)
    }

    /// The initial ensemble described by the scenario.
    pub fn materialize(&self) -> Result<EnsembleState> {
        self.validate()?;
        let freqs = self.frequencies()?;
        let spins = match &self.initial {
            Some(init) => init
                .iter()
                .map(|v| SpinState::new(v[0], v[1], v[2]))
                .collect::<Result<Vec<_>>>()?,
            None => random_spins(
                &mut stream_rng(self.seed, streams::SPINS),
                self.p,
                (self.z0_range[0], self.z0_range[1]),
            )?,
        };
        EnsembleState::new(freqs, self.weight_vector()?, spins)
    }
}
