//! Equilibria of the full-sum closed loop and their linearizations.
//!
//! At a pole configuration `Q` the tangent dynamics split into
//! `d(dx)/dt = K dx - E dy`, `d(dy)/dt = E dx + K dy` with `K = kappa 1^T`
//! (rank one, `kappa_j = z_j`) and `E = diag(e)`. Complexifying with
//! `xi = dx + i dy` gives `xi' = (K + iE) xi`, so the real `2p x 2p`
//! spectrum is the union of the spectra of `K + iE` and `K - iE`. We
//! diagonalize the two `p x p` complex matrices; the block matrix is only
//! built for cross-checks.

use std::fmt;

use nalgebra::{Complex, DMatrix, DVector, Schur};
use num_complex::Complex64;

use crate::dynamics::{integrate, ControlLaw, IntegratorConfig};
use crate::ensemble::{EnsembleState, FrequencySet, Pole};
use crate::error::{Error, Result};

pub const MAX_ENUMERATION_SIZE: usize = 20;

/// Frequencies closer than this are reported as near-degenerate.
const NEWTON_MAX_ITER: usize = 8;
pub const NEAR_DEGENERATE_GAP: f64 = 1e-6;

const SCHUR_EPS: f64 = f64::EPSILON;
const SCHUR_MAX_ITER: usize = 10_000;

/// A pole configuration: spin `j` sits at `(0, 0, signs[j])`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Equilibrium {
    pub signs: Vec<Pole>,
}

impl Equilibrium {
    pub fn new(signs: Vec<Pole>) -> Self {
        Self { signs }
    }

    pub fn uniform(p: usize, pole: Pole) -> Self {
        Self {
            signs: vec![pole; p],
        }
    }

    pub fn from_signs(signs: &[i32]) -> Result<Self> {
        Ok(Self {
            signs: signs.iter().map(|&s| Pole::from_sign(s)).collect::<Result<_>>()?,
        })
    }

    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }

    pub fn z(&self) -> Vec<f64> {
        self.signs.iter().map(|s| s.sign()).collect()
    }

    pub fn is_uniform(&self, pole: Pole) -> bool {
        self.signs.iter().all(|&s| s == pole)
    }
}

impl fmt::Display for Equilibrium {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (j, s) in self.signs.iter().enumerate() {
            if j > 0 {
                f.write_str(",")?;
            }
            write!(f, "{s}")?;
        }
        f.write_str(")")
    }
}

/// All `2^p` pole configurations in binary counting order, with `Down` as
/// digit 0 and the first spin as the most significant digit.
pub fn enumerate_equilibria(p: usize) -> Result<Vec<Equilibrium>> {
    if p > MAX_ENUMERATION_SIZE {
        return Err(Error::TooManySpins {
            p,
            max: MAX_ENUMERATION_SIZE,
        });
    }
    Ok((0u64..1 << p)
        .map(|k| {
            Equilibrium::new(
                (0..p)
                    .map(|j| {
                        if (k >> (p - 1 - j)) & 1 == 1 {
                            Pole::Up
                        } else {
                            Pole::Down
                        }
                    })
                    .collect(),
            )
        })
        .collect())
}

/// The pair `(K, E)` of the linearization at an equilibrium.
#[derive(Clone, Debug)]
pub struct LinearizationPair {
    pub k: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub kappa: DVector<f64>,
    pub zeta: DVector<f64>,
}

impl LinearizationPair {
    pub fn at(q: &Equilibrium, freqs: &FrequencySet) -> Result<Self> {
        let p = q.len();
        if freqs.len() != p {
            return Err(Error::LengthMismatch {
                what: "freqs",
                expected: p,
                got: freqs.len(),
            });
        }
        let kappa = DVector::from_vec(q.z());
        let zeta = DVector::from_element(p, 1.0);
        Ok(Self {
            k: &kappa * zeta.transpose(),
            e: DMatrix::from_diagonal(&DVector::from_column_slice(freqs.as_slice())),
            kappa,
            zeta,
        })
    }

    /// `K + i E` (`Branch::Plus`) or `K - i E` (`Branch::Minus`).
    pub fn complexified(&self, branch: Branch) -> DMatrix<Complex64> {
        let s = branch.sign();
        DMatrix::from_fn(self.k.nrows(), self.k.ncols(), |r, c| {
            Complex::new(self.k[(r, c)], s * self.e[(r, c)])
        })
    }

    /// Real block matrix `[[K, -E], [E, K]]` acting on `(dx, dy)`.
    pub fn block_matrix(&self) -> DMatrix<f64> {
        let p = self.k.nrows();
        let mut m = DMatrix::zeros(2 * p, 2 * p);
        m.view_mut((0, 0), (p, p)).copy_from(&self.k);
        m.view_mut((0, p), (p, p)).copy_from(&(-&self.e));
        m.view_mut((p, 0), (p, p)).copy_from(&self.e);
        m.view_mut((p, p), (p, p)).copy_from(&self.k);
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    fn sign(self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Classification {
    Attractor,
    Repeller,
    Saddle,
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Classification::Attractor => "attractor",
            Classification::Repeller => "repeller",
            Classification::Saddle => "saddle",
        })
    }
}

#[derive(Clone, Debug)]
pub struct EquilibriumReport {
    pub equilibrium: Equilibrium,
    /// Spectrum of `K + iE` followed by that of `K - iE`.
    pub eigenvalues: Vec<Complex64>,
    pub branches: Vec<Branch>,
    pub residuals: Vec<Complex64>,
    pub n_unstable: usize,
    pub n_stable: usize,
    pub classification: Classification,
    pub min_abs_real: f64,
    pub hyperbolic: bool,
    pub near_degenerate: bool,
}

impl EquilibriumReport {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().map(|r| r.norm()).fold(0.0, f64::max)
    }

    /// Distance between the `K - iE` spectrum and the conjugate of the
    /// `K + iE` spectrum.
    pub fn conjugate_symmetry_error(&self) -> f64 {
        let p = self.eigenvalues.len() / 2;
        let plus: Vec<_> = self.eigenvalues[..p].iter().map(|l| l.conj()).collect();
        spectrum_distance(&plus, &self.eigenvalues[p..])
    }
}

/// Eigenvalues of a dense complex matrix via the complex Schur form.
pub fn complex_eigenvalues(m: DMatrix<Complex64>) -> Option<Vec<Complex64>> {
    if m.nrows() == 1 {
        return Some(vec![m[(0, 0)]]);
    }
    let schur = Schur::try_new(m, SCHUR_EPS, SCHUR_MAX_ITER)?;
    let (_, t) = schur.unpack();
    Some((0..t.nrows()).map(|i| t[(i, i)]).collect())
}

/// Eigenvalues of a dense real matrix (real Schur form, 2x2 blocks expanded).
pub fn real_matrix_eigenvalues(m: DMatrix<f64>) -> Option<Vec<Complex64>> {
    let schur = Schur::try_new(m, SCHUR_EPS, SCHUR_MAX_ITER)?;
    Some(schur.complex_eigenvalues().iter().copied().collect())
}

/// Greedy matching distance between two spectra of equal size: the largest
/// gap between an eigenvalue of `a` and its nearest unused partner in `b`.
pub fn spectrum_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for x in a {
        let (j, d) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, y)| (j, (x - y).norm()))
            .min_by(|l, r| l.1.total_cmp(&r.1))
            .expect("equal lengths");
        used[j] = true;
        worst = worst.max(d);
    }
    worst
}

/// Linearized spectrum, secular residuals and classification at `q`.
pub fn spectrum_at(q: &Equilibrium, freqs: &FrequencySet) -> Result<EquilibriumReport> {
    let lin = LinearizationPair::at(q, freqs)?;
    let mut eigenvalues = Vec::with_capacity(2 * q.len());
    let mut branches = Vec::with_capacity(2 * q.len());
    for branch in [Branch::Plus, Branch::Minus] {
        let ev = complex_eigenvalues(lin.complexified(branch)).ok_or_else(|| Error::Eigensolver {
            pattern: q.to_string(),
        })?;
        let ev = refine_roots(ev, &lin.kappa, freqs, branch);
        branches.extend(std::iter::repeat_n(branch, ev.len()));
        eigenvalues.extend(ev);
    }
    let residuals = eigenvalues
        .iter()
        .zip(&branches)
        .map(|(&l, &b)| secular_residual(l, q, freqs, b))
        .collect::<Result<Vec<_>>>()?;

    let n_unstable = eigenvalues.iter().filter(|l| l.re > 0.0).count();
    let n_stable = eigenvalues.iter().filter(|l| l.re < 0.0).count();
    let classification = if n_stable == eigenvalues.len() {
        Classification::Attractor
    } else if n_unstable == eigenvalues.len() {
        Classification::Repeller
    } else {
        Classification::Saddle
    };
    let min_abs_real = eigenvalues
        .iter()
        .map(|l| l.re.abs())
        .fold(f64::INFINITY, f64::min);
    let hyperbolic = min_abs_real > hyperbolicity_tolerance(freqs);

    Ok(EquilibriumReport {
        equilibrium: q.clone(),
        eigenvalues,
        branches,
        residuals,
        n_unstable,
        n_stable,
        classification,
        min_abs_real,
        hyperbolic,
        near_degenerate: freqs.min_gap() < NEAR_DEGENERATE_GAP,
    })
}

fn secular(ell: Complex64, z: &DVector<f64>, freqs: &FrequencySet, s: f64) -> (Complex64, Complex64) {
    let mut g = Complex64::new(-1.0, 0.0);
    let mut dg = Complex64::new(0.0, 0.0);
    for (&zj, &e) in z.iter().zip(freqs.as_slice()) {
        let r = (ell - Complex64::new(0.0, s * e)).inv();
        g += zj * r;
        dg -= zj * r * r;
    }
    (g, dg)
}

/// Newton polish of Schur eigenvalues on `sum_j z_j / (ell - i s e_j) = 1`.
/// A step is kept only while it reduces the residual and stays well inside
/// the separation from the neighbouring eigenvalues.
fn refine_roots(
    mut ev: Vec<Complex64>,
    z: &DVector<f64>,
    freqs: &FrequencySet,
    branch: Branch,
) -> Vec<Complex64> {
    let s = branch.sign();
    for k in 0..ev.len() {
        let sep = ev
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .map(|(_, l)| (l - ev[k]).norm())
            .fold(f64::INFINITY, f64::min);
        let start = ev[k];
        let mut ell = start;
        let (mut g, mut dg) = secular(ell, z, freqs, s);
        for _ in 0..NEWTON_MAX_ITER {
            if !g.is_finite() || dg.norm() == 0.0 {
                break;
            }
            let cand = ell - g / dg;
            let (gc, dgc) = secular(cand, z, freqs, s);
            if !(gc.norm() < g.norm()) || (cand - start).norm() > 0.25 * sep {
                break;
            }
            ell = cand;
            g = gc;
            dg = dgc;
        }
        ev[k] = ell;
    }
    ev
}

/// `1e-8 * max(1, max |e_i|)`.
pub fn hyperbolicity_tolerance(freqs: &FrequencySet) -> f64 {
    1e-8 * freqs.max_abs().max(1.0)
}

/// Left side minus one of the eigenvalue identity
/// `sum_j z_j (lambda + i(mu - e_j)) / (lambda^2 + (e_j - mu)^2) = 1`
/// for `ell = lambda + i mu`; the `Minus` branch uses the conjugate numerator
/// `lambda - i(mu - e_j)`. Vanishes at every eigenvalue of `K ± iE`.
pub fn secular_residual(
    ell: Complex64,
    q: &Equilibrium,
    freqs: &FrequencySet,
    branch: Branch,
) -> Result<Complex64> {
    if freqs.len() != q.len() {
        return Err(Error::LengthMismatch {
            what: "freqs",
            expected: q.len(),
            got: freqs.len(),
        });
    }
    let (lambda, mu) = (ell.re, ell.im);
    let s = branch.sign();
    let mut sum = Complex64::new(0.0, 0.0);
    for (j, (&z, &e)) in q.z().iter().zip(freqs.as_slice()).enumerate() {
        // The Minus branch lives at the mirrored frequencies -e_j.
        let d = lambda * lambda + (s * e - mu) * (s * e - mu);
        if d == 0.0 {
            return Err(Error::NonHyperbolic { index: j + 1 });
        }
        sum += z * Complex64::new(lambda, s * (mu - s * e)) / d;
    }
    Ok(sum - 1.0)
}

/// `prod_{i<j} (e_i - e_j)`.
pub fn vandermonde_det(freqs: &FrequencySet) -> f64 {
    let e = freqs.as_slice();
    let mut det = 1.0;
    for i in 0..e.len() {
        for j in i + 1..e.len() {
            det *= e[i] - e[j];
        }
    }
    det
}

/// Runs the free (zero-control) flow from a state on the zero-feedback
/// manifold `{sum w_i x_i = sum w_i y_i = 0}` and returns the largest
/// `|sum w_i x_i| + |sum w_i y_i|` seen over `[0, horizon]`.
///
/// States in the pole set stay put; any other state leaves the manifold when
/// the frequencies are distinct.
pub fn invariance_check_free(state: &EnsembleState, horizon: f64, h: f64) -> Result<f64> {
    let w = state.weights().as_slice();
    let transverse = |vs: &[crate::ensemble::SpinState]| {
        let (mut sx, mut sy) = (0.0, 0.0);
        for (v, wi) in vs.iter().zip(w) {
            sx += wi * v.x();
            sy += wi * v.y();
        }
        sx.abs() + sy.abs()
    };
    let initial = transverse(state.spins());
    if initial > 1e-9 {
        return Err(Error::Precondition(format!(
            "state is not on the zero-feedback manifold (|sum x| + |sum y| = {initial:.3e})"
        )));
    }
    let cfg = IntegratorConfig::rk4(h, horizon)?;
    let traj = integrate(state, &ControlLaw::Zero, &cfg, 1)?;
    Ok(traj
        .spins
        .iter()
        .map(|s| transverse(s))
        .fold(0.0, f64::max))
}
