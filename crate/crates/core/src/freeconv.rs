//! Free additive convolution of a semicircular law with a finite atomic measure.
//!
//! The convolution `rho = mu_v ⊞ nu` is handled through its subordination
//! function `omega(z) = z - v G_rho(z)`, which turns the Pastur equation
//! `G_rho(z) = G_nu(z - v G_rho(z))` into a scalar fixed-point problem on the
//! lower half-plane. Everything downstream (bias, covariance kernel, densities)
//! is assembled from a [`SubordinationSolution`].

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;
use crate::testfn::TestFunction;

/// Pastur residual required of every accepted solution.
pub const PASTUR_TOL: f64 = 1e-12;
/// Fixed-point damping.
pub const DAMPING: f64 = 0.5;
/// Residual below which the solver switches to Newton steps.
pub const NEWTON_SWITCH: f64 = 1e-3;
pub const MAX_ITERATIONS: usize = 10_000;
/// Guard on `|1 + v G_nu'(omega)|`; below it the derivative chain rule blows up.
pub const EDGE_GUARD: f64 = 1e-10;

/// Finite atomic probability measure on the real line.
///
/// Atoms are kept sorted by location with duplicate locations merged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct AtomicMeasure {
    atoms: Vec<(f64, f64)>,
    mean: f64,
    second_moment: f64,
}

impl AtomicMeasure {
    /// Builds a measure from `(location, weight)` pairs. Weights must be
    /// positive and sum to one within `1e-12`.
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Param("atomic measure needs at least one atom".into()));
        }
        for &(x, w) in &atoms {
            if !x.is_finite() {
                return Err(Error::Param(format!("atom location {x} is not finite")));
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::Param(format!("atom weight {w} is not positive")));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Param(format!("atom weights sum to {total}, expected 1")));
        }
        let mut atoms = atoms;
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (x, w) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == x => last.1 += w,
                _ => merged.push((x, w)),
            }
        }
        let mean = merged.iter().map(|&(x, w)| w * x).sum();
        let second_moment = merged.iter().map(|&(x, w)| w * x * x).sum();
        Ok(Self {
            atoms: merged,
            mean,
            second_moment,
        })
    }

    /// Uniform measure on the given points (with multiplicity), e.g. the
    /// spectral measure of a diagonal matrix.
    pub fn from_points(points: &[f64]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Param("empty point set".into()));
        }
        let mut sorted = points.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        let mut i = 0;
        while i < sorted.len() {
            let x = sorted[i];
            let mut count = 0usize;
            while i < sorted.len() && sorted[i] == x {
                count += 1;
                i += 1;
            }
            atoms.push((x, count as f64 / n));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Param(format!("point weights sum to {total}")));
        }
        Self::new(atoms)
    }

    pub fn dirac(x: f64) -> Self {
        Self {
            atoms: vec![(x, 1.0)],
            mean: x,
            second_moment: x * x,
        }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    pub fn moment(&self, k: u32) -> f64 {
        self.atoms.iter().map(|&(x, w)| w * x.powi(k as i32)).sum()
    }

    pub fn min_location(&self) -> f64 {
        self.atoms[0].0
    }

    pub fn max_location(&self) -> f64 {
        self.atoms[self.atoms.len() - 1].0
    }

    /// `G_nu(w)` together with its first two derivatives.
    pub fn stieltjes_with_derivatives(&self, w: Complex64) -> [Complex64; 3] {
        let mut g = Complex64::new(0.0, 0.0);
        let mut g1 = g;
        let mut g2 = g;
        for &(x, p) in &self.atoms {
            let r = (w - x).inv();
            let r2 = r * r;
            g += p * r;
            g1 -= p * r2;
            g2 += 2.0 * p * r2 * r;
        }
        [g, g1, g2]
    }

    /// `∫ nu(dx) (a - x)^{-p} (b - x)^{-q}`.
    pub fn mixed_moment(&self, a: Complex64, b: Complex64, p: i32, q: i32) -> Complex64 {
        self.atoms
            .iter()
            .map(|&(x, w)| w * (a - x).powi(-p) * (b - x).powi(-q))
            .sum()
    }
}

impl TryFrom<Vec<(f64, f64)>> for AtomicMeasure {
    type Error = Error;

    fn try_from(atoms: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(atoms)
    }
}

impl From<AtomicMeasure> for Vec<(f64, f64)> {
    fn from(m: AtomicMeasure) -> Self {
        m.atoms
    }
}

/// Order-`order` derivative of the Stieltjes transform,
/// `G^(k)(w) = (-1)^k k! Σ p_i (w - x_i)^{-k-1}`.
pub fn stieltjes(nu: &AtomicMeasure, w: Complex64, order: u32) -> Result<Complex64> {
    if order > 3 {
        return Err(Error::Input(format!("derivative order {order} not supported")));
    }
    if w.im == 0.0 {
        if let Some(&(x, _)) = nu.atoms.iter().find(|a| a.0 == w.re) {
            return Err(Error::Pole(x));
        }
    }
    let k = order as i32;
    let factorial = (1..=k).product::<i32>() as f64;
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    let sum: Complex64 = nu
        .atoms
        .iter()
        .map(|&(x, p)| p * (w - x).powi(-k - 1))
        .sum();
    Ok(sign * factorial * sum)
}

/// Stieltjes transform of the centered semicircle of variance `v`, on the
/// branch with `G(z) ~ 1/z` at infinity.
pub fn semicircle_stieltjes(v: f64, z: Complex64) -> Complex64 {
    let r = v.sqrt();
    // product of principal roots keeps the cut on [-2r, 2r]
    let root = (z - 2.0 * r).sqrt() * (z + 2.0 * r).sqrt();
    (z - root) / (2.0 * v)
}

/// Solution of the Pastur equation at one spectral parameter, with first and
/// second derivatives of `G_rho` and of the subordination function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubordinationSolution {
    pub z: Complex64,
    pub v: f64,
    pub g: Complex64,
    pub omega: Complex64,
    pub g1: Complex64,
    pub g2: Complex64,
    pub omega1: Complex64,
    pub omega2: Complex64,
    pub iterations: usize,
    pub residual: f64,
}

impl SubordinationSolution {
    fn conj(&self) -> Self {
        Self {
            z: self.z.conj(),
            v: self.v,
            g: self.g.conj(),
            omega: self.omega.conj(),
            g1: self.g1.conj(),
            g2: self.g2.conj(),
            omega1: self.omega1.conj(),
            omega2: self.omega2.conj(),
            iterations: self.iterations,
            residual: self.residual,
        }
    }
}

/// Solves `G = G_nu(z - v G)` for `G = G_rho(z)`, `rho = mu_v ⊞ nu`.
pub fn solve_pastur(nu: &AtomicMeasure, v: f64, z: Complex64) -> Result<SubordinationSolution> {
    solve_pastur_from(nu, v, z, None)
}

/// As [`solve_pastur`], warm-started from `guess` (an approximation of
/// `G_rho(z)`, e.g. the solution at a nearby point).
pub fn solve_pastur_from(
    nu: &AtomicMeasure,
    v: f64,
    z: Complex64,
    guess: Option<Complex64>,
) -> Result<SubordinationSolution> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::Param(format!("semicircular variance {v} must be positive")));
    }
    if z.im == 0.0 || !z.re.is_finite() || !z.im.is_finite() {
        return Err(Error::Domain("solve_pastur", z));
    }
    if z.im < 0.0 {
        let guess = guess.map(|g| g.conj());
        return solve_upper(nu, v, z.conj(), guess).map(|s| s.conj());
    }
    solve_upper(nu, v, z, guess)
}

fn solve_upper(
    nu: &AtomicMeasure,
    v: f64,
    z: Complex64,
    guess: Option<Complex64>,
) -> Result<SubordinationSolution> {
    let mut g = match guess {
        Some(g) if g.im < 0.0 && g.is_finite() => g,
        _ => z.inv(),
    };
    let mut newton = false;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let [gn, gn1, _] = nu.stieltjes_with_derivatives(z - v * g);
        residual = (g - gn).norm();
        if residual <= PASTUR_TOL {
            break;
        }
        if residual < NEWTON_SWITCH {
            newton = true;
        }
        let next = if newton {
            let step = (g - gn) / (1.0 + v * gn1);
            let candidate = g - step;
            if candidate.im < 0.0 && candidate.is_finite() {
                candidate
            } else {
                newton = false;
                (1.0 - DAMPING) * g + DAMPING * gn
            }
        } else {
            (1.0 - DAMPING) * g + DAMPING * gn
        };
        g = next;
    }
    if residual > PASTUR_TOL {
        return Err(Error::Solver {
            z,
            iterations,
            residual,
        });
    }
    // polish: Newton converges quadratically, so a couple of extra steps push
    // the error to rounding level (finite differences downstream rely on it)
    for _ in 0..2 {
        let [gn, gn1, _] = nu.stieltjes_with_derivatives(z - v * g);
        let candidate = g - (g - gn) / (1.0 + v * gn1);
        let [cn, _, _] = nu.stieltjes_with_derivatives(z - v * candidate);
        let r = (candidate - cn).norm();
        if candidate.im < 0.0 && r <= residual {
            g = candidate;
            residual = r;
        } else {
            break;
        }
    }
    if !(g.im < 0.0) {
        return Err(Error::Solver {
            z,
            iterations,
            residual,
        });
    }
    let omega = z - v * g;
    let [_, gn1, gn2] = nu.stieltjes_with_derivatives(omega);
    let denom = 1.0 + v * gn1;
    if denom.norm() < EDGE_GUARD {
        return Err(Error::NearEdge {
            z,
            margin: denom.norm(),
        });
    }
    let omega1 = denom.inv();
    let g1 = gn1 * omega1;
    let omega2 = -v * gn2 * omega1 * omega1 * omega1;
    let g2 = gn2 * omega1 * omega1 + gn1 * omega2;
    Ok(SubordinationSolution {
        z,
        v,
        g,
        omega,
        g1,
        g2,
        omega1,
        omega2,
        iterations,
        residual,
    })
}

/// `H(w) = w + v G_nu(w)`; `w` lies in the image `Omega` of the subordination
/// map iff `Im H(w) > 0`.
pub fn is_in_omega(nu: &AtomicMeasure, v: f64, w: Complex64) -> bool {
    let [g, _, _] = nu.stieltjes_with_derivatives(w);
    w.im > 0.0 && (w + v * g).im > 0.0
}

/// Default vertical schedule for density recovery: `0.1 · 4^{-k}` down to
/// below `1e-6`.
pub fn default_eta_schedule() -> Vec<f64> {
    let mut out = Vec::new();
    let mut eta = 0.1;
    while eta > 1e-6 {
        out.push(eta);
        eta /= 4.0;
    }
    out.push(eta);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub x: f64,
    pub density: f64,
    pub error_estimate: f64,
    pub warning: Option<String>,
}

/// Density of `mu_v ⊞ nu` at `x` by Stieltjes inversion,
/// `-(1/π) lim Im G(x + iη)`, extrapolated in `η` over `eta_schedule`.
pub fn density(nu: &AtomicMeasure, v: f64, x: f64, eta_schedule: &[f64]) -> Result<DensityEstimate> {
    if eta_schedule.len() < 3 {
        return Err(Error::Input("eta schedule needs at least three values".into()));
    }
    if eta_schedule.windows(2).any(|w| !(w[1] < w[0])) || !(eta_schedule[eta_schedule.len() - 1] > 0.0) {
        return Err(Error::Input("eta schedule must be positive and decreasing".into()));
    }
    if eta_schedule[eta_schedule.len() - 1] > 1e-6 {
        return Err(Error::Input("eta schedule tail must be at most 1e-6".into()));
    }
    let mut guess = None;
    let mut values = Vec::with_capacity(eta_schedule.len());
    for &eta in eta_schedule {
        let sol = solve_pastur_from(nu, v, Complex64::new(x, eta), guess)?;
        guess = Some(sol.g);
        values.push(-sol.g.im / std::f64::consts::PI);
    }
    // successive quadratic extrapolants along the schedule
    let extrapolants: Vec<f64> = (2..values.len())
        .map(|k| neville_at_zero(&eta_schedule[k - 2..=k], &values[k - 2..=k]))
        .collect();
    let m = values.len();
    let linear = neville_at_zero(&eta_schedule[m - 2..], &values[m - 2..]);
    let best = extrapolants[extrapolants.len() - 1];
    let error_estimate = (best - linear).abs();
    let diffs: Vec<f64> = extrapolants.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let unstable = diffs
        .windows(2)
        .rev()
        .take(3)
        .any(|w| w[1] > 4.0 * w[0].max(1e-13));
    let warning = unstable.then(|| format!("non-monotone extrapolation residuals at x = {x}"));
    Ok(DensityEstimate {
        x,
        density: best.max(0.0),
        error_estimate,
        warning,
    })
}

/// Value at 0 of the polynomial interpolating `(xs, ys)`.
pub(crate) fn neville_at_zero(xs: &[f64], ys: &[f64]) -> f64 {
    let mut p = ys.to_vec();
    let n = xs.len();
    for level in 1..n {
        for i in 0..n - level {
            let (xi, xj) = (xs[i], xs[i + level]);
            p[i] = (xj * p[i] - xi * p[i + 1]) / (xj - xi);
        }
    }
    p[0]
}

/// Interval guaranteed to contain the support of `mu_v ⊞ nu`.
pub fn support_window(nu: &AtomicMeasure, v: f64) -> Result<(f64, f64)> {
    let r = 2.0 * v.sqrt();
    let (lo, hi) = (nu.min_location() - r, nu.max_location() + r);
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::Support(format!("degenerate window [{lo}, {hi}]")));
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Absolute error target is `abs_tol * (1 + ‖φ‖_∞)`.
    pub abs_tol: f64,
    pub max_depth: u32,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            abs_tol: 1e-6,
            max_depth: 30,
        }
    }
}

/// `∫ φ dρ` for `ρ = mu_v ⊞ nu`, by adaptive quadrature of `φ · density`.
pub fn integrate_against_rho(
    nu: &AtomicMeasure,
    v: f64,
    phi: &TestFunction,
    spec: &QuadratureSpec,
) -> Result<f64> {
    let (lo, hi) = support_window(nu, v)?;
    let phi_sup = (0..=512)
        .map(|k| lo + (hi - lo) * k as f64 / 512.0)
        .map(|x| phi.evaluate(x).norm())
        .fold(0.0, f64::max);
    let tol = spec.abs_tol * (1.0 + phi_sup);
    let schedule = default_eta_schedule();
    let mut failure = None;
    let mut integrand = |x: f64| match density(nu, v, x, &schedule) {
        Ok(d) => phi.evaluate(x).re * d.density,
        Err(e) => {
            failure.get_or_insert(e);
            0.0
        }
    };
    // density has square-root edges inside the window; start from a fine split
    let pieces = 16;
    let mut total = 0.0;
    for k in 0..pieces {
        let a = lo + (hi - lo) * k as f64 / pieces as f64;
        let b = lo + (hi - lo) * (k + 1) as f64 / pieces as f64;
        total += quad::adaptive(&mut integrand, a, b, tol / pieces as f64, spec.max_depth).value;
    }
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(total)
}

/// Writes `x, density, error_estimate` rows with `#` metadata lines.
pub fn write_density_csv<W: Write>(
    mut out: W,
    header: &[String],
    rows: &[DensityEstimate],
) -> Result<()> {
    for line in header {
        writeln!(out, "# {line}")?;
    }
    writeln!(out, "x,density,error_estimate")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.x, r.density, r.error_estimate)?;
    }
    Ok(())
}
