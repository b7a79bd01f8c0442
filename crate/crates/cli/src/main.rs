use std::path::PathBuf;
use std::process::ExitCode;

use bloch_core::experiment::output::{to_toml, write_text};
use bloch_core::experiment::runner;
use bloch_core::experiment::{ScenarioConfig, Selection, WeightScheme};
use bloch_core::{ControlLaw, Error, Method, Pole};
use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "bloch", version, about = "Closed-loop Bloch-ensemble experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the closed loop and write trajectory CSV, summary and plot.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        law: Option<LawArg>,
        /// Truncation order for `--law truncated`.
        #[arg(long)]
        n: Option<usize>,
        /// File name (inside the output directory) for an SVG plot.
        #[arg(long)]
        svg: Option<String>,
    },
    /// Linearized spectra at the pole configurations.
    Spectrum {
        #[command(flatten)]
        common: Common,
        /// all, down, up, or a sign pattern such as +1,-1,-1.
        #[arg(long, allow_hyphen_values = true)]
        which: Option<String>,
    },
    /// Monte-Carlo estimate of the fraction of initial states steered to the south pole.
    Basin {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, value_enum)]
        law: Option<LawArg>,
    },
    /// Hitting-time schedule of the truncated feedbacks under dyadic weights.
    Truncated {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        n_min: Option<usize>,
        #[arg(long)]
        n_max: Option<usize>,
    },
    /// Radiation-damping dynamics.
    Rde {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rate: Option<f64>,
        /// +1 (towards the north pole) or -1.
        #[arg(long, allow_hyphen_values = true, value_parser = parse_sign)]
        sign: Option<Pole>,
        #[arg(long)]
        svg: Option<String>,
    },
    /// Closed-form against numeric Bohr-Fourier coefficients of the free flow.
    Fourier {
        #[command(flatten)]
        common: Common,
        /// Probe frequencies away from the ensemble frequencies.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        off_grid: Option<Vec<f64>>,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed; required whenever frequencies or states are drawn.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    p: Option<usize>,
    /// Explicit frequencies, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    freqs: Option<Vec<f64>>,
    /// unit, dyadic, or geometric:BASE.
    #[arg(long)]
    weights: Option<String>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    z_threshold: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LawArg {
    Zero,
    FullSum,
    Weighted,
    Truncated,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Rk4Renormalized,
    LieEulerRodrigues,
}

fn parse_sign(s: &str) -> Result<Pole, String> {
    match s {
        "+1" | "1" | "up" => Ok(Pole::Up),
        "-1" | "down" => Ok(Pole::Down),
        _ => Err(format!("expected +1 or -1, got `{s}`")),
    }
}

fn parse_weights(s: &str) -> Result<WeightScheme, Failure> {
    match s.split_once(':') {
        None if s == "unit" => Ok(WeightScheme::Unit),
        None if s == "dyadic" => Ok(WeightScheme::Dyadic),
        Some(("geometric", b)) => b
            .parse()
            .map(|base| WeightScheme::Geometric { base })
            .map_err(|_| Failure::usage(format!("--weights: cannot parse base `{b}`"))),
        _ => Err(Failure::usage(format!(
            "--weights: expected unit, dyadic or geometric:BASE, got `{s}`"
        ))),
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config { .. } => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// How much of the scenario is drawn from the seed.
enum Randomness {
    Frequencies,
    FrequenciesAndStates,
    Always,
}

impl Common {
    fn resolve(&self, randomness: Randomness, default_weights: WeightScheme) -> Result<ScenarioConfig, Failure> {
        let p = self.p.or(self.freqs.as_ref().map(Vec::len));
        let mut cfg = match (&self.config, p) {
            (Some(path), _) => ScenarioConfig::load(path).map_err(|e| Failure::usage(e.to_string()))?,
            (None, Some(p)) => {
                let mut cfg = ScenarioConfig::new(0, p);
                cfg.weights = default_weights;
                cfg
            }
            (None, None) => return Err(Failure::usage("one of --config, --p or --freqs is required")),
        };
        if let Some(p) = self.p {
            cfg.p = p;
        }
        if let Some(f) = &self.freqs {
            cfg.freqs = Some(f.clone());
        }
        if let Some(w) = &self.weights {
            cfg.weights = parse_weights(w)?;
        }
        if let Some(m) = self.method {
            cfg.integrator.method = match m {
                MethodArg::Rk4Renormalized => Method::Rk4Renormalized,
                MethodArg::LieEulerRodrigues => Method::LieEulerRodrigues,
            };
        }
        if let Some(h) = self.h {
            cfg.integrator.h = h;
        }
        if let Some(t) = self.t_final {
            cfg.integrator.t_final = t;
        }
        if let Some(s) = self.stride {
            cfg.integrator.stride = s;
        }
        if let Some(z) = self.z_threshold {
            cfg.z_threshold = z;
        }
        if let Some(d) = &self.out_dir {
            cfg.outputs.dir = d.clone();
        }

        let randomized = match randomness {
            Randomness::Frequencies => cfg.freqs.is_none(),
            Randomness::FrequenciesAndStates => cfg.freqs.is_none() || cfg.initial.is_none(),
            Randomness::Always => true,
        };
        match self.seed {
            Some(seed) => cfg.seed = seed,
            None if randomized => {
                return Err(Failure::usage("--seed is required for randomized runs"));
            }
            None => {}
        }
        Ok(cfg)
    }
}

fn law_from(arg: LawArg, n: Option<usize>) -> Result<ControlLaw, Failure> {
    Ok(match arg {
        LawArg::Zero => ControlLaw::Zero,
        LawArg::FullSum => ControlLaw::FullSum,
        LawArg::Weighted => ControlLaw::Weighted,
        LawArg::Truncated => ControlLaw::Truncated {
            n: n.ok_or_else(|| Failure::usage("--law truncated needs --n"))?,
        },
    })
}

fn validated(cfg: ScenarioConfig) -> Result<ScenarioConfig, Failure> {
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    let text = to_toml(&cfg)?;
    write_text(&cfg.outputs.path("scenario.toml"), &text)?;
    Ok(cfg)
}

fn report<T: serde::Serialize>(summary: &T) -> Result<(), Failure> {
    print!("{}", to_toml(summary)?);
    Ok(())
}

fn status(ok: bool) -> u8 {
    if ok {
        0
    } else {
        EXIT_NOT_CONVERGED
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Simulate { common, law, n, svg } => {
            let mut cfg = common.resolve(Randomness::FrequenciesAndStates, WeightScheme::Unit)?;
            if let Some(l) = law {
                cfg.law = law_from(l, n)?;
            } else if let (Some(n), ControlLaw::Truncated { .. }) = (n, cfg.law) {
                cfg.law = ControlLaw::Truncated { n };
            }
            if svg.is_some() {
                cfg.outputs.svg = svg;
            }
            let out = runner::run_scenario(&validated(cfg)?)?;
            report(&out.summary)?;
            Ok(status(out.summary.converged))
        }
        Command::Spectrum { common, which } => {
            let mut cfg = common.resolve(Randomness::Frequencies, WeightScheme::Unit)?;
            if let Some(w) = which {
                cfg.spectrum.which = w.parse::<Selection>().map_err(|e| Failure::usage(e.to_string()))?;
            }
            cfg.validate_spectrum().map_err(|e| Failure::usage(e.to_string()))?;
            let (_, summary) = runner::run_spectrum(&validated(cfg)?)?;
            report(&summary)?;
            Ok(0)
        }
        Command::Basin { common, samples, law } => {
            let mut cfg = common.resolve(Randomness::Always, WeightScheme::Unit)?;
            if let Some(s) = samples {
                cfg.basin.samples = s;
            }
            if let Some(l) = law {
                cfg.law = law_from(l, None)?;
            }
            let (est, summary) = runner::run_basin(&validated(cfg)?)?;
            report(&summary)?;
            Ok(status(est.converged == est.samples))
        }
        Command::Truncated { common, epsilon, n_min, n_max } => {
            let mut cfg = common.resolve(Randomness::FrequenciesAndStates, WeightScheme::Dyadic)?;
            if let Some(e) = epsilon {
                cfg.truncated.epsilon = e;
            }
            if n_min.is_some() {
                cfg.truncated.n_min = n_min;
            }
            if n_max.is_some() {
                cfg.truncated.n_max = n_max;
            }
            let (sched, summary) = runner::run_truncated(&validated(cfg)?)?;
            report(&summary)?;
            Ok(status(sched.all_converged()))
        }
        Command::Rde { common, rate, sign, svg } => {
            let mut cfg = common.resolve(Randomness::FrequenciesAndStates, WeightScheme::Unit)?;
            let (r0, s0) = match cfg.law {
                ControlLaw::RadiationDamping { rate, sign } => (rate, sign),
                _ => (1.0, Pole::Up),
            };
            cfg.law = ControlLaw::RadiationDamping {
                rate: rate.unwrap_or(r0),
                sign: sign.unwrap_or(s0),
            };
            if svg.is_some() {
                cfg.outputs.svg = svg;
            }
            let out = runner::run_scenario(&validated(cfg)?)?;
            report(&out.summary)?;
            Ok(status(out.summary.converged))
        }
        Command::Fourier { common, off_grid } => {
            let mut cfg = common.resolve(Randomness::FrequenciesAndStates, WeightScheme::Unit)?;
            if let Some(w) = off_grid {
                cfg.fourier.off_grid = w;
            }
            let (_, summary) = runner::run_fourier(&validated(cfg)?)?;
            report(&summary)?;
            Ok(status(summary.within_tolerance))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(EXIT_USAGE);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
