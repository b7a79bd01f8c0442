//! Acceptance suite. Every criterion runs at its stated tolerance and prints
//! one PASS/FAIL line; the process fails if any criterion fails.
//!
//! Run alone with `cargo test -p bloch-core --test acceptance`.

use std::f64::consts::TAU;
use std::process::ExitCode;
use std::time::Instant;

use bloch_core::analysis::{
    basin_monte_carlo, lyapunov, n_bar, uniform_initial_states, LyapunovTrace,
};
use bloch_core::dynamics::{
    integrate, integrate_final, rde_rhs, ControlLaw, IntegratorConfig, Method, Trajectory,
};
use bloch_core::ensemble::{
    random_frequencies, stream_rng, streams, target_state, EnsembleState, FrequencySet, Pole,
    WeightVector,
};
use bloch_core::experiment::runner::{fourier, settle_time, simulate, truncated_schedule};
use bloch_core::experiment::{ScenarioConfig, WeightScheme};
use bloch_core::spectral::{enumerate_equilibria, hyperbolicity_tolerance, spectrum_at, vandermonde_det};
use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

const SEEDS: std::ops::Range<u64> = 0..10;

struct Verdict {
    id: u32,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: u32, title: &'static str, pass: bool, detail: String) -> Verdict {
    let v = Verdict { id, title, pass, detail };
    println!(
        "[criterion {:>2}] {} {} :: {}",
        v.id,
        if v.pass { "PASS" } else { "FAIL" },
        v.title,
        v.detail
    );
    v
}

fn max_z(s: &EnsembleState) -> f64 {
    s.spins().iter().map(|x| x.z()).fold(f64::NEG_INFINITY, f64::max)
}

fn min_z(s: &EnsembleState) -> f64 {
    s.spins().iter().map(|x| x.z()).fold(f64::INFINITY, f64::min)
}

struct LongRun {
    seed: u64,
    traj: Trajectory,
    seconds: f64,
}

fn long_runs(weighted: bool) -> Vec<LongRun> {
    SEEDS
        .map(|seed| {
            let mut cfg = ScenarioConfig::new(seed, 30);
            if weighted {
                cfg.weights = WeightScheme::Geometric { base: 1.1 };
                cfg.law = ControlLaw::Weighted;
            }
            let start = Instant::now();
            let out = simulate(&cfg).expect("long run");
            LongRun {
                seed,
                traj: out.trajectory,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

fn reached(run: &LongRun) -> bool {
    let fin = run.traj.final_state();
    max_z(&fin) < -0.99 && lyapunov(&fin) / fin.weights().sum() < -0.99
}

fn criterion_1(runs: &[LongRun]) -> Verdict {
    let mut lines = Vec::new();
    let mut ok = 0;
    for r in runs {
        let fin = r.traj.final_state();
        let v_over_p = lyapunov(&fin) / 30.0;
        let pass = max_z(&fin) < -0.99 && v_over_p < -0.99 && r.seconds < 300.0;
        ok += pass as usize;
        lines.push(format!(
            "seed {}: max z {:.4}, V/p {:.4}, gap {:.1e}, {:.1}s",
            r.seed,
            max_z(&fin),
            v_over_p,
            r.traj.freqs.min_gap(),
            r.seconds
        ));
    }
    verdict(
        1,
        "unweighted p=30 full-sum run reaches z_i(T) < -0.99 and V/p < -0.99",
        ok == runs.len(),
        format!("{ok}/{} seeds; {}", runs.len(), lines.join("; ")),
    )
}

fn criterion_2(unweighted: &[LongRun], weighted: &[LongRun]) -> Verdict {
    let mut lines = Vec::new();
    let mut ok = 0;
    for (a, b) in unweighted.iter().zip(weighted) {
        let ta = settle_time(&a.traj, Pole::Down, 0.9);
        let tb = settle_time(&b.traj, Pole::Down, 0.9);
        let pass = reached(b) && matches!((ta, tb), (Some(x), Some(y)) if y > x);
        ok += pass as usize;
        let show = |t: Option<f64>| t.map_or("never".to_string(), |t| format!("{t:.0}"));
        lines.push(format!(
            "seed {}: converged {}, crossing unweighted {} vs weighted {}",
            a.seed,
            reached(b),
            show(ta),
            show(tb)
        ));
    }
    verdict(
        2,
        "weights 1.1^-i converge and cross z = -0.9 later than the unweighted run",
        ok == weighted.len(),
        format!("{ok}/{} seeds; {}", weighted.len(), lines.join("; ")),
    )
}

/// `|central difference of V - analytic dV/dt|` at every interior step.
fn fd_errors(s0: &EnsembleState, h: f64) -> Vec<f64> {
    let cfg = IntegratorConfig::rk4(h, 4.0).unwrap();
    let traj = integrate(s0, &ControlLaw::FullSum, &cfg, 1).unwrap();
    let tr = LyapunovTrace::from_trajectory(&traj);
    (1..tr.values.len() - 1)
        .map(|k| ((tr.values[k + 1] - tr.values[k - 1]) / (2.0 * h) - tr.rates[k]).abs())
        .collect()
}

fn criterion_3(accepted: &[&Trajectory]) -> Verdict {
    let worst_rise = accepted
        .iter()
        .map(|t| t.max_lyapunov_increase / t.h)
        .fold(f64::NEG_INFINITY, f64::max);
    let mono = worst_rise <= 1e-8;

    let mut orders = Vec::new();
    for seed in 0..5 {
        let s0 = bloch_core::ensemble::random_ensemble(seed, 5, (1.0, 4.0), (-1.0, 1.0), WeightVector::unit(5)).unwrap();
        // Compare both step sizes at the coarse grid times t = 0.02 k.
        let coarse = fd_errors(&s0, 0.02);
        let fine = fd_errors(&s0, 0.01);
        let e1 = coarse.iter().copied().fold(0.0, f64::max);
        let e2 = (0..coarse.len()).map(|k| fine[2 * k + 1]).fold(0.0, f64::max);
        orders.push((e1 / e2).log2());
    }
    let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);
    verdict(
        3,
        "V never rises more than 1e-8 h per step; dV/dt matches finite differences at order >= 1.9",
        mono && min_order >= 1.9,
        format!(
            "{} trajectories, worst per-step rise / h = {worst_rise:.2e}; observed orders {:?}",
            accepted.len(),
            orders.iter().map(|o| format!("{o:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn criterion_4(rk4: &[&Trajectory]) -> Verdict {
    let rk4_drift = rk4.iter().map(|t| t.max_norm_drift).fold(0.0, f64::max);
    let mut lie_drift: f64 = 0.0;
    for seed in [0u64, 1] {
        let s0 = ScenarioConfig::new(seed, 30).materialize().unwrap();
        let cfg = IntegratorConfig::new(Method::LieEulerRodrigues, 0.01, 20000.0).unwrap();
        let t = integrate(&s0, &ControlLaw::FullSum, &cfg, 10_000).unwrap();
        lie_drift = lie_drift.max(t.max_norm_drift);
    }
    verdict(
        4,
        "norm drift <= 1e-9 (RK4 renormalized) and <= 1e-12 (Lie-Euler-Rodrigues)",
        rk4_drift <= 1e-9 && lie_drift <= 1e-12,
        format!("RK4 over {} runs: {rk4_drift:.2e}; Lie-Euler p=30 T=20000: {lie_drift:.2e}", rk4.len()),
    )
}

/// Real `2p x 2p` matrix `[[K, -E], [E, K]]` with `K = z 1^T`, assembled
/// here independently of the library.
fn block_oracle(z: &[f64], e: &[f64]) -> Vec<Complex64> {
    let p = z.len();
    let m = DMatrix::from_fn(2 * p, 2 * p, |r, c| {
        let (i, j) = (r % p, c % p);
        let k = z[i];
        let diag = if i == j { e[i] } else { 0.0 };
        match (r < p, c < p) {
            (true, true) | (false, false) => k,
            (true, false) => -diag,
            (false, true) => diag,
        }
    });
    Schur::new(m).complex_eigenvalues().iter().copied().collect()
}

fn match_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for x in a {
        let (j, d) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, y)| (j, (x - y).norm()))
            .min_by(|l, r| l.1.total_cmp(&r.1))
            .unwrap();
        used[j] = true;
        worst = worst.max(d);
    }
    worst
}

fn criterion_5() -> Verdict {
    let (mut fa, mut fb, mut fc, mut fd, mut fe) = (0, 0, 0, 0, 0);
    let (mut min_re, mut max_res, mut max_dist) = (f64::INFINITY, 0.0f64, 0.0f64);
    let mut equilibria = 0;
    for k in 0..100u64 {
        let p = 2 + (k % 7) as usize;
        let freqs = random_frequencies(&mut stream_rng(1000 + k, streams::FREQUENCIES), p, (1.0, 4.0)).unwrap();
        let tol = hyperbolicity_tolerance(&freqs);
        for q in enumerate_equilibria(p).unwrap() {
            equilibria += 1;
            let r = spectrum_at(&q, &freqs).unwrap();
            min_re = min_re.min(r.min_abs_real);
            fa += (r.min_abs_real <= tol) as usize;
            if q.is_uniform(Pole::Down) {
                fb += r.eigenvalues.iter().any(|l| l.re >= 0.0) as usize;
            } else if q.is_uniform(Pole::Up) {
                fb += r.eigenvalues.iter().any(|l| l.re <= 0.0) as usize;
            } else {
                fc += (r.eigenvalues.iter().filter(|l| l.re > 0.0).count() < 2) as usize;
            }
            max_res = max_res.max(r.max_residual());
            fd += (r.max_residual() > 1e-8) as usize;
            let d = match_distance(&r.eigenvalues, &block_oracle(&q.z(), freqs.as_slice()));
            max_dist = max_dist.max(d);
            fe += (d > 1e-8) as usize;
        }
    }
    verdict(
        5,
        "spectral laws on 100 random sets, p in 2..=8, all 2^p equilibria",
        fa + fb + fc + fd + fe == 0,
        format!(
            "{equilibria} equilibria; violations (a) {fa} (b) {fb} (c) {fc} (d) {fd} (e) {fe}; \
             min |Re| {min_re:.2e}, max residual {max_res:.2e}, max oracle distance {max_dist:.2e}"
        ),
    )
}

/// Determinant of the dense matrix `[e_i^j]`, by Gaussian elimination in
/// exact rational arithmetic (every f64 is a dyadic rational).
fn exact_vandermonde_matrix_det(e: &[f64]) -> f64 {
    let p = e.len();
    let mut m: Vec<Vec<BigRational>> = (0..p)
        .map(|i| {
            let x = BigRational::from_float(e[i]).unwrap();
            let mut row = Vec::with_capacity(p);
            let mut acc = BigRational::one();
            for _ in 0..p {
                row.push(acc.clone());
                acc *= &x;
            }
            row
        })
        .collect();
    let mut det = BigRational::one();
    for c in 0..p {
        let Some(piv) = (c..p).find(|&r| !m[r][c].is_zero()) else {
            return 0.0;
        };
        if piv != c {
            m.swap(piv, c);
            det = -det;
        }
        det *= &m[c][c];
        for r in c + 1..p {
            let factor = &m[r][c] / &m[c][c];
            let (top, bottom) = m.split_at_mut(r);
            for (a, b) in bottom[0][c..].iter_mut().zip(&top[c][c..]) {
                *a -= &factor * b;
            }
        }
    }
    det.to_f64().unwrap()
}

fn criterion_6() -> Verdict {
    let mut worst: f64 = 0.0;
    for k in 0..100u64 {
        let p = 1 + (k % 8) as usize;
        let freqs = random_frequencies(&mut stream_rng(2000 + k, streams::FREQUENCIES), p, (1.0, 4.0)).unwrap();
        let e = freqs.as_slice();
        // det of rows (1, e_i, e_i^2, ...) is prod_{i<j} (e_j - e_i).
        let sign = if (p * (p - 1) / 2).is_multiple_of(2) { 1.0 } else { -1.0 };
        let oracle = sign * exact_vandermonde_matrix_det(e);
        let rel = (vandermonde_det(&freqs) - oracle).abs() / oracle.abs();
        worst = worst.max(rel);
    }
    let dup_sets = [vec![1.0, 2.0, 1.0], vec![2.5, 2.5], vec![1.0, 3.0, 2.0, 4.0, 3.0]];
    let zeros = dup_sets
        .iter()
        .all(|f| vandermonde_det(&FrequencySet::new(f.clone()).unwrap()) == 0.0);
    verdict(
        6,
        "product formula matches the dense determinant to 1e-10; exact zero on duplicates",
        worst <= 1e-10 && zeros,
        format!("100 sets against an exact rational determinant, worst relative error {worst:.2e}; duplicates give exact zero: {zeros}"),
    )
}

fn criterion_7() -> Verdict {
    let cfg = IntegratorConfig::rk4(0.01, 20000.0).unwrap();
    let mut lines = Vec::new();
    let mut pass = true;
    for (p, samples) in [(1usize, 200usize), (3, 100)] {
        let freqs = random_frequencies(&mut stream_rng(0, streams::FREQUENCIES), p, (1.0, 4.0)).unwrap();
        let est = basin_monte_carlo(&freqs, &WeightVector::unit(p), &ControlLaw::FullSum, samples, &cfg, -0.99, 7)
            .unwrap();
        let worst = est.outcomes.iter().map(|o| o.max_final_z).fold(f64::NEG_INFINITY, f64::max);
        pass &= est.fraction == 1.0;
        lines.push(format!(
            "p={p}: {}/{} converged (worst final max z {worst:.4}, gap {:.2e})",
            est.converged,
            est.samples,
            freqs.min_gap()
        ));
    }
    verdict(
        7,
        "uniform initial states reach the south pole within T = 20000 (fraction 1.0)",
        pass,
        lines.join("; "),
    )
}

fn criterion_8() -> Verdict {
    let mut cfg = ScenarioConfig::new(0, 12);
    cfg.weights = WeightScheme::Dyadic;
    cfg.z0_range = [-1.0, 1.0];
    cfg.truncated.epsilon = 0.05;
    cfg.integrator.stride = 100;
    let nb = n_bar(0.05).unwrap();
    let bound_ok = 2f64.powi(-(nb as i32) + 1) < 0.05 && 2f64.powi(-(nb as i32) + 2) >= 0.05;
    let sched = truncated_schedule(&cfg).unwrap();
    let covers = sched.entries.iter().map(|e| e.n).collect::<Vec<_>>() == (nb..=12).collect::<Vec<_>>();
    let stays = sched
        .entries
        .iter()
        .all(|e| e.hitting_time.is_some() && e.max_distance_after.is_some_and(|d| d <= 0.05));
    let table: Vec<String> = sched
        .entries
        .iter()
        .map(|e| format!("N={} t={}", e.n, e.hitting_time.map_or("none".into(), |t| format!("{t:.0}"))))
        .collect();
    verdict(
        8,
        "truncated feedback schedule, dyadic weights, p=12, eps=0.05",
        bound_ok && covers && stays,
        format!("N_bar = {nb}; {}", table.join(", ")),
    )
}

fn criterion_9() -> Verdict {
    let mut worst_on: f64 = 0.0;
    let mut worst_off: f64 = 0.0;
    let mut horizons = Vec::new();
    for k in 0..16u64 {
        let p = 1 + (k % 8) as usize;
        let mut cfg = ScenarioConfig::new(3000 + k, p);
        cfg.law = ControlLaw::Zero;
        cfg.z0_range = [-1.0, 1.0];
        let freqs = cfg.frequencies().unwrap();
        let gap = if p > 1 { freqs.min_gap() } else { f64::INFINITY };
        // Long enough to resolve every beat between neighbouring lines.
        let t = (50.0 * TAU / gap).max(1000.0).ceil();
        cfg.integrator.t_final = t;
        horizons.push(t);
        let (rows, _) = fourier(&cfg).unwrap();
        for r in rows {
            match r.spin {
                Some(_) => worst_on = worst_on.max(r.error()),
                None => worst_off = worst_off.max(r.error()),
            }
        }
    }
    verdict(
        9,
        "closed-form Bohr-Fourier coefficients match quadrature within 0.02",
        worst_on <= 0.02 && worst_off <= 0.02,
        format!(
            "16 free trajectories, p <= 8, T in [{:.0}, {:.0}]; worst on-line error {worst_on:.2e}, \
             worst off-line magnitude {worst_off:.2e}",
            horizons.iter().copied().fold(f64::INFINITY, f64::min),
            horizons.iter().copied().fold(0.0, f64::max)
        ),
    )
}

fn criterion_10() -> Verdict {
    let p = 4;
    let freqs = random_frequencies(&mut stream_rng(0, streams::FREQUENCIES), p, (1.0, 4.0)).unwrap();
    let weights = WeightVector::unit(p);
    let starts = uniform_initial_states(&freqs, &weights, 50, 10).unwrap();
    let cfg = IntegratorConfig::rk4(0.01, 20000.0).unwrap();
    let mut up_ok = 0;
    let mut down_ok = 0;
    let (mut worst_up, mut worst_down) = (f64::INFINITY, f64::NEG_INFINITY);
    for s0 in &starts {
        let up = integrate_final(s0, &ControlLaw::RadiationDamping { rate: 1.0, sign: Pole::Up }, &cfg).unwrap();
        worst_up = worst_up.min(min_z(&up));
        up_ok += (min_z(&up) > 0.99) as usize;
        let down = integrate_final(s0, &ControlLaw::RadiationDamping { rate: 1.0, sign: Pole::Down }, &cfg).unwrap();
        worst_down = worst_down.max(max_z(&down));
        down_ok += (max_z(&down) < -0.99) as usize;
    }
    let mut fixed = 0.0f64;
    for pole in [Pole::Up, Pole::Down] {
        let x = target_state(&freqs, &weights, pole).unwrap();
        for sign in [Pole::Up, Pole::Down] {
            fixed = fixed.max(rde_rhs(&x, 1.0, sign).unwrap().max_abs());
        }
    }
    verdict(
        10,
        "radiation damping: sign +1 reaches z_i > 0.99, sign -1 reaches z_i < -0.99; poles are fixed points",
        up_ok == starts.len() && down_ok == starts.len() && fixed == 0.0,
        format!(
            "p={p}, gap {:.2e}: +1 {up_ok}/50 (worst min z {worst_up:.4}); -1 {down_ok}/50 (worst max z {worst_down:.4}); \
             max |rhs| at poles {fixed:.1e}",
            freqs.min_gap()
        ),
    )
}

/// Criteria selected by `ACCEPTANCE_ONLY` (comma-separated ids); all when unset.
fn selected() -> Vec<u32> {
    match std::env::var("ACCEPTANCE_ONLY") {
        Ok(list) => list.split(',').filter_map(|t| t.trim().parse().ok()).collect(),
        Err(_) => (1..=10).collect(),
    }
}

fn main() -> ExitCode {
    let start = Instant::now();
    let only = selected();
    let needs_runs = only.iter().any(|id| (1..=4).contains(id));
    let (unweighted, weighted) = if needs_runs {
        (long_runs(false), long_runs(true))
    } else {
        (Vec::new(), Vec::new())
    };
    let all: Vec<&Trajectory> = unweighted.iter().chain(&weighted).map(|r| &r.traj).collect();

    let mut verdicts = Vec::new();
    for id in only {
        verdicts.push(match id {
            1 => criterion_1(&unweighted),
            2 => criterion_2(&unweighted, &weighted),
            3 => criterion_3(&all),
            4 => criterion_4(&all),
            5 => criterion_5(),
            6 => criterion_6(),
            7 => criterion_7(),
            8 => criterion_8(),
            9 => criterion_9(),
            10 => criterion_10(),
            _ => continue,
        });
    }
    let passed = verdicts.iter().filter(|v| v.pass).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.0}s",
        verdicts.len(),
        start.elapsed().as_secs_f64()
    );
    if passed == verdicts.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
