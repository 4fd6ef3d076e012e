//! Limiting bias `β(z)`, covariance kernel `Γ(z1, z2)`, their semicircular
//! special cases, the finite-`N` bias bound and the extension of both to
//! general test functions.

use std::f64::consts::PI;
use std::io::Write;

use faer::Mat;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::ensemble::EnsembleParams;
use crate::error::{Error, Result};
use crate::freeconv::{neville_at_zero, semicircle_stieltjes, solve_pastur, support_window, AtomicMeasure, SubordinationSolution};
use crate::quad;
use crate::testfn::{TestFnKind, TestFunction};

/// Denominators below this are reported as singular.
pub const SINGULARITY_GUARD: f64 = 1e-10;
/// Kernel values with a smaller branch margin are rejected.
pub const BRANCH_MARGIN_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Mode {
    /// `(σ², ν_∞)` with `nu` a proxy for `ν_∞`.
    Limit,
    /// `(Nσ_N², Ns_N², Nτ_N, N²κ_N, ν_N)` at dimension `n`.
    FiniteN { n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationParams {
    pub sigma2: f64,
    pub s2: f64,
    pub tau: f64,
    pub kappa: f64,
    pub nu: AtomicMeasure,
    pub mode: Mode,
}

impl FluctuationParams {
    pub fn new(sigma2: f64, s2: f64, tau: f64, kappa: f64, nu: AtomicMeasure, mode: Mode) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::Param(format!("sigma2 = {sigma2} must be positive")));
        }
        if !s2.is_finite() || !tau.is_finite() || !kappa.is_finite() {
            return Err(Error::Param("s2, tau and kappa must be finite".into()));
        }
        if let Mode::FiniteN { n: 0 } = mode {
            return Err(Error::Param("finite-N mode needs n > 0".into()));
        }
        Ok(Self {
            sigma2,
            s2,
            tau,
            kappa,
            nu,
            mode,
        })
    }

    pub fn limit(sigma2: f64, s2: f64, tau: f64, kappa: f64, nu: AtomicMeasure) -> Result<Self> {
        Self::new(sigma2, s2, tau, kappa, nu, Mode::Limit)
    }

    /// Finite-`N` parameters of an ensemble, centered at `ρ_N`.
    pub fn finite_n(params: &EnsembleParams) -> Result<Self> {
        params.validate()?;
        let n = params.n as f64;
        Self::new(
            n * params.sigma_n2(),
            n * params.s_n2(),
            n * params.tau_n(),
            n * n * params.kappa_n(),
            params.nu_n()?,
            Mode::FiniteN { n: params.n },
        )
    }

    /// Limit parameters of an ensemble with `ν_N` as the `ν_∞` proxy.
    pub fn limit_of(params: &EnsembleParams) -> Result<Self> {
        Self::limit(params.sigma2, params.s2, params.tau, params.kappa, params.nu_n()?)
    }

    pub fn solve(&self, z: Complex64) -> Result<SubordinationSolution> {
        solve_pastur(&self.nu, self.sigma2, z)
    }

    pub fn dimension(&self) -> Option<usize> {
        match self.mode {
            Mode::FiniteN { n } => Some(n),
            Mode::Limit => None,
        }
    }
}

fn beta_bracket(p: &FluctuationParams, sol: &SubordinationSolution) -> Result<Complex64> {
    let w1 = sol.omega1;
    let den = p.tau + (p.sigma2 - p.tau) * w1;
    if den.norm() < SINGULARITY_GUARD {
        return Err(Error::Singularity {
            what: "tau + (sigma2 - tau) omega'",
            z: sol.z,
            magnitude: den.norm(),
        });
    }
    Ok(p.s2 - p.sigma2 + p.tau * p.tau * (w1 - 1.0) / den - p.kappa * sol.g1 / w1)
}

/// `β(z) = G''/(2ω'²) [s² - σ² + τ²(ω' - 1)/(τ + (σ² - τ)ω') - κ G'/ω']`.
pub fn beta(p: &FluctuationParams, z: Complex64) -> Result<Complex64> {
    let sol = p.solve(z)?;
    beta_at(p, &sol)
}

pub fn beta_at(p: &FluctuationParams, sol: &SubordinationSolution) -> Result<Complex64> {
    let bracket = beta_bracket(p, sol)?;
    Ok(sol.g2 / (2.0 * sol.omega1 * sol.omega1) * bracket)
}

/// `β̃ = β / ω'`.
pub fn beta_tilde(p: &FluctuationParams, z: Complex64) -> Result<Complex64> {
    let sol = p.solve(z)?;
    let bracket = beta_bracket(p, &sol)?;
    Ok(sol.g2 / (2.0 * sol.omega1 * sol.omega1 * sol.omega1) * bracket)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelValue {
    pub z1: Complex64,
    pub z2: Complex64,
    /// `∫ ν(dx) / ((ω(z1) - x)(ω(z2) - x))`
    pub i: Complex64,
    pub gamma: Complex64,
    /// `min(|1 - σ² I|, |1 - τ I|)`
    pub branch_margin: f64,
}

struct IPartials {
    i: Complex64,
    d1: Complex64,
    d2: Complex64,
    d12: Complex64,
}

fn i_partials(nu: &AtomicMeasure, s1: &SubordinationSolution, s2: &SubordinationSolution) -> IPartials {
    let (w1, w2) = (s1.omega, s2.omega);
    let mut j11 = Complex64::new(0.0, 0.0);
    let mut j21 = j11;
    let mut j12 = j11;
    let mut j22 = j11;
    for &(x, p) in nu.atoms() {
        let a = (w1 - x).inv();
        let b = (w2 - x).inv();
        let ab = p * a * b;
        j11 += ab;
        j21 += ab * a;
        j12 += ab * b;
        j22 += ab * a * b;
    }
    IPartials {
        i: j11,
        d1: -s1.omega1 * j21,
        d2: -s2.omega1 * j12,
        d12: s1.omega1 * s2.omega1 * j22,
    }
}

fn branch_margin(p: &FluctuationParams, i: Complex64) -> f64 {
    (1.0 - p.sigma2 * i).norm().min((1.0 - p.tau * i).norm())
}

fn kernel_from_solutions(p: &FluctuationParams, s1: &SubordinationSolution, s2: &SubordinationSolution) -> Result<KernelValue> {
    let IPartials { i, d1, d2, d12 } = i_partials(&p.nu, s1, s2);
    let margin = branch_margin(p, i);
    if !(margin > BRANCH_MARGIN_GUARD) {
        return Err(Error::NearSingularKernel(Box::new(KernelValue {
            z1: s1.z,
            z2: s2.z,
            i,
            gamma: Complex64::new(f64::NAN, f64::NAN),
            branch_margin: margin,
        })));
    }
    let (s, t) = (p.sigma2, p.tau);
    let a = 1.0 - s * i;
    let b = 1.0 - t * i;
    let d1d2 = d1 * d2;
    let gamma = (p.s2 - s - t) * d12
        + p.kappa * (d1d2 + i * d12)
        + s * d12 / a
        + s * s * d1d2 / (a * a)
        + t * d12 / b
        + t * t * d1d2 / (b * b);
    Ok(KernelValue {
        z1: s1.z,
        z2: s2.z,
        i,
        gamma,
        branch_margin: margin,
    })
}

/// `Γ(z1, z2) = ∂₁∂₂ γ(z1, z2)` from exact partials of `I`.
pub fn gamma_kernel(p: &FluctuationParams, z1: Complex64, z2: Complex64) -> Result<KernelValue> {
    let s1 = p.solve(z1)?;
    let s2 = p.solve(z2)?;
    kernel_from_solutions(p, &s1, &s2)
}

/// `γ = (s² - σ² - τ) I + (κ/2) I² - log(1 - σ² I) - log(1 - τ I)`,
/// principal branches.
pub fn gamma_primitive(p: &FluctuationParams, z1: Complex64, z2: Complex64) -> Result<Complex64> {
    let s1 = p.solve(z1)?;
    let s2 = p.solve(z2)?;
    let i = i_partials(&p.nu, &s1, &s2).i;
    Ok((p.s2 - p.sigma2 - p.tau) * i + 0.5 * p.kappa * i * i - (1.0 - p.sigma2 * i).ln() - (1.0 - p.tau * i).ln())
}

fn guard(what: &'static str, z: Complex64, d: Complex64) -> Result<()> {
    if d.norm() < SINGULARITY_GUARD {
        return Err(Error::Singularity {
            what,
            z,
            magnitude: d.norm(),
        });
    }
    Ok(())
}

/// Semicircle transform and its derivative, `G' = -G²/(1 - σ²G²)`.
fn semicircle_with_derivative(sigma2: f64, z: Complex64) -> Result<(Complex64, Complex64)> {
    if z.im == 0.0 {
        return Err(Error::Domain("semicircle transform", z));
    }
    let g = semicircle_stieltjes(sigma2, z);
    let d = 1.0 - sigma2 * g * g;
    guard("1 - sigma2 G^2", z, d)?;
    Ok((g, -g * g / d))
}

/// `b₀(φ_z) = -G'G (s² - σ² + τ²G²/(1 - τG²) + κG²)` for the pure Wigner case.
pub fn bao_xie_b0(sigma2: f64, s2: f64, tau: f64, kappa: f64, z: Complex64) -> Result<Complex64> {
    let (g, g1) = semicircle_with_derivative(sigma2, z)?;
    let g2 = g * g;
    let d = 1.0 - tau * g2;
    guard("1 - tau G^2", z, d)?;
    Ok(-g1 * g * (s2 - sigma2 + tau * tau * g2 / d + kappa * g2))
}

/// `C₀(φ_{z1}, φ_{z2})` for the pure Wigner case.
pub fn bao_xie_c0(sigma2: f64, s2: f64, tau: f64, kappa: f64, z1: Complex64, z2: Complex64) -> Result<Complex64> {
    let (g1, dg1) = semicircle_with_derivative(sigma2, z1)?;
    let (g2, dg2) = semicircle_with_derivative(sigma2, z2)?;
    let gg = g1 * g2;
    let a = 1.0 - sigma2 * gg;
    let b = 1.0 - tau * gg;
    guard("1 - sigma2 G(z1) G(z2)", z1, a)?;
    guard("1 - tau G(z1) G(z2)", z1, b)?;
    Ok(dg1 * dg2 * (s2 - sigma2 - tau + 2.0 * kappa * gg + sigma2 / (a * a) + tau / (b * b)))
}

/// Explicit upper bound on `|β_N(z)|`:
/// `P_N(1/|Im z|) ∫ ν_N(dx) / |ω(z) - x|²` with
/// `P_N(y) = (1 + 2σ²y²)((σ² + s²) y + (N²m_N + (3 + 1/N)σ⁴) y³)`.
pub fn bias_bound(p: &FluctuationParams, z: Complex64) -> Result<f64> {
    let Mode::FiniteN { n } = p.mode else {
        return Err(Error::Param("bias bound needs finite-N parameters".into()));
    };
    if z.im == 0.0 {
        return Err(Error::Domain("bias_bound", z));
    }
    let y = z.im.abs().recip();
    let s4 = p.sigma2 * p.sigma2;
    let n2_m = p.kappa + 2.0 * s4 + p.tau * p.tau;
    let c3 = n2_m + (3.0 + 1.0 / n as f64) * s4;
    let poly = (1.0 + 2.0 * p.sigma2 * y * y) * ((p.sigma2 + p.s2) * y + c3 * y * y * y);
    let omega = p.solve(z)?.omega;
    let mean_sq: f64 = p.nu.atoms().iter().map(|&(x, w)| w / (omega - x).norm_sqr()).sum();
    Ok(poly * mean_sq)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrapolated {
    pub value: f64,
    pub error_estimate: f64,
}

/// Default heights for [`extend_bias`].
pub fn default_y_schedule() -> Vec<f64> {
    (0..6).map(|k| 0.032 / f64::powi(2.0, k)).collect()
}

fn extrapolate(ys: &[f64], values: &[f64]) -> Result<Extrapolated> {
    let m = values.len();
    let quadratic: Vec<f64> = (2..m).map(|k| neville_at_zero(&ys[k - 2..=k], &values[k - 2..=k])).collect();
    let linear = neville_at_zero(&ys[m - 2..], &values[m - 2..]);
    let value = quadratic[quadratic.len() - 1];
    let error_estimate = (value - linear).abs();
    if quadratic.len() >= 3 {
        let d: Vec<f64> = quadratic.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        let last = d[d.len() - 1];
        let prev = d[d.len() - 2];
        let scale = 1e-10 * (1.0 + value.abs());
        if last > scale && last > 2.0 * prev {
            return Err(Error::Accuracy(format!(
                "extrapolants diverge: successive changes {prev:e}, {last:e}"
            )));
        }
    }
    Ok(Extrapolated { value, error_estimate })
}

/// `b(φ) = lim_{y↓0} -(1/π) ∫ φ(x) Im β(x + iy) dx`, extrapolated over
/// `y_schedule` (decreasing, tail at most `1e-3`).
pub fn extend_bias(p: &FluctuationParams, phi: &TestFunction, y_schedule: &[f64], abs_tol: f64) -> Result<Extrapolated> {
    if !phi.is_real() {
        return Err(Error::Input("bias extension needs a real test function".into()));
    }
    if y_schedule.len() < 3
        || y_schedule.windows(2).any(|w| !(w[1] < w[0]))
        || !(y_schedule[y_schedule.len() - 1] > 0.0 && y_schedule[y_schedule.len() - 1] <= 1e-3)
    {
        return Err(Error::Input("y schedule must be decreasing, positive, with tail at most 1e-3".into()));
    }
    let (lo, hi) = support_window(&p.nu, p.sigma2)?;
    let margin = 1.0 + 10.0 * y_schedule[0];
    let (mut a, mut b) = (lo - margin, hi + margin);
    if let Some((s, t)) = phi.support() {
        a = a.max(s);
        b = b.min(t);
    }
    if !(b > a) {
        return Ok(Extrapolated {
            value: 0.0,
            error_estimate: 0.0,
        });
    }
    let mut values = Vec::with_capacity(y_schedule.len());
    for &y in y_schedule {
        let mut failure = None;
        let mut f = |x: f64| {
            let phi_x = phi.evaluate(x).re;
            if phi_x == 0.0 {
                return 0.0;
            }
            match beta(p, Complex64::new(x, y)) {
                Ok(v) => -phi_x * v.im / PI,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        };
        let pieces = 32;
        let mut total = 0.0;
        for k in 0..pieces {
            let s = a + (b - a) * k as f64 / pieces as f64;
            let t = a + (b - a) * (k + 1) as f64 / pieces as f64;
            total += quad::adaptive(&mut f, s, t, abs_tol / pieces as f64, 40).value;
        }
        if let Some(e) = failure {
            return Err(e);
        }
        values.push(total);
    }
    extrapolate(y_schedule, &values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoleFitSpec {
    /// Distances of the pole rows from the real axis.
    pub heights: Vec<f64>,
    /// Pole spacing along each row, as a multiple of its height.
    pub spacing: f64,
    /// Fit points on the support window of `ρ`.
    pub samples: usize,
    /// Maximum sup-norm residual, relative to `1 + ‖φ‖_∞`.
    pub residual_threshold: f64,
    /// Relative singular value cutoff of the least-squares solve.
    pub rcond: f64,
}

impl Default for PoleFitSpec {
    fn default() -> Self {
        Self {
            heights: vec![0.25, 0.5, 1.0],
            spacing: 0.5,
            samples: 1200,
            residual_threshold: 1e-3,
            rcond: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceExtension {
    pub value: f64,
    /// Imaginary part of the bilinear sum; zero up to rounding.
    pub imaginary_part: f64,
    /// Sup-norm fit residual on the support window (0 on the exact path).
    pub fit_residual: f64,
    pub poles: Vec<Complex64>,
    pub coefficients: Vec<Complex64>,
}

/// `V[φ] = Σ_{j,k} c_j c_k Γ(z_j, z_k)` over the poles of a resolvent
/// representation of `φ`. Resolvent pairs and constants are represented
/// exactly; other real functions are fitted on the support window.
pub fn extend_variance(p: &FluctuationParams, phi: &TestFunction, spec: &PoleFitSpec) -> Result<VarianceExtension> {
    if !phi.is_real() {
        return Err(Error::Input("variance extension needs a real test function".into()));
    }
    let (poles, coefficients, fit_residual) = match phi.kind() {
        TestFnKind::RealResolventPair { z } => (vec![*z, z.conj()], vec![Complex64::new(1.0, 0.0); 2], 0.0),
        TestFnKind::Constant { .. } => (Vec::new(), Vec::new(), 0.0),
        _ => fit_poles(p, phi, spec)?,
    };
    let sols = poles.iter().map(|&z| p.solve(z)).collect::<Result<Vec<_>>>()?;
    let m = poles.len();
    let mut total = Complex64::new(0.0, 0.0);
    for j in 0..m {
        for k in j..m {
            let g = kernel_from_solutions(p, &sols[j], &sols[k])?.gamma;
            let w = if j == k { 1.0 } else { 2.0 };
            total += w * coefficients[j] * coefficients[k] * g;
        }
    }
    Ok(VarianceExtension {
        value: total.re,
        imaginary_part: total.im,
        fit_residual,
        poles,
        coefficients,
    })
}

fn fit_poles(p: &FluctuationParams, phi: &TestFunction, spec: &PoleFitSpec) -> Result<(Vec<Complex64>, Vec<Complex64>, f64)> {
    if spec.heights.is_empty() || spec.heights.iter().any(|h| !(*h > 0.0)) || !(spec.spacing > 0.0) || spec.samples < 2 {
        return Err(Error::Input("invalid pole fit settings".into()));
    }
    let (lo, hi) = support_window(&p.nu, p.sigma2)?;
    let xs: Vec<f64> = (0..spec.samples)
        .map(|k| lo + (hi - lo) * k as f64 / (spec.samples - 1) as f64)
        .collect();
    let target: Vec<f64> = xs.iter().map(|&x| phi.evaluate(x).re).collect();
    let sup = target.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut upper = Vec::new();
    for &h in &spec.heights {
        let step = spec.spacing * h;
        let (a, b) = (lo - 2.0 * h, hi + 2.0 * h);
        let count = ((b - a) / step).ceil() as usize;
        for k in 0..=count {
            upper.push(Complex64::new(a + (b - a) * k as f64 / count as f64, h));
        }
    }
    // real basis: 2 Re φ_z and -2 Im φ_z, so that c = a + ib gives 2 Re(c φ_z)
    let cols = 2 * upper.len();
    let basis = Mat::from_fn(xs.len(), cols, |i, j| {
        let r = (upper[j / 2] - xs[i]).inv();
        if j % 2 == 0 {
            2.0 * r.re
        } else {
            -2.0 * r.im
        }
    });
    let norms: Vec<f64> = (0..cols)
        .map(|j| (0..xs.len()).map(|i| basis[(i, j)] * basis[(i, j)]).sum::<f64>().sqrt())
        .collect();
    let scaled = Mat::from_fn(xs.len(), cols, |i, j| basis[(i, j)] / norms[j]);
    let svd = scaled
        .thin_svd()
        .map_err(|e| Error::Input(format!("least-squares solve failed: {e:?}")))?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let smax = (0..s.nrows()).map(|i| s[i]).fold(0.0, f64::max);
    let mut coef = vec![0.0; cols];
    for r in 0..s.nrows() {
        if s[r] <= spec.rcond * smax {
            continue;
        }
        let proj: f64 = (0..xs.len()).map(|i| u[(i, r)] * target[i]).sum::<f64>() / s[r];
        for (j, c) in coef.iter_mut().enumerate() {
            *c += v[(j, r)] * proj;
        }
    }
    for (c, n) in coef.iter_mut().zip(&norms) {
        *c /= n;
    }
    let mut residual = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let fit: f64 = (0..cols).map(|j| basis[(i, j)] * coef[j]).sum();
        residual = residual.max((fit - phi.evaluate(x).re).abs());
    }
    let threshold = spec.residual_threshold * (1.0 + sup);
    if !(residual <= threshold) {
        return Err(Error::Representation { residual, threshold });
    }
    let c_upper: Vec<Complex64> = coef.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect();
    let mut poles = upper.clone();
    poles.extend(upper.iter().map(|z| z.conj()));
    let mut coefficients = c_upper.clone();
    coefficients.extend(c_upper.iter().map(|c| c.conj()));
    Ok((poles, coefficients, residual))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HsNorm {
    /// `(∫ (1 + 2|t|)^{2s} |f̂(t)|² dt)^{1/2}` over the resolved band.
    pub norm: f64,
    /// Difference to the same norm on the grid coarsened by two.
    pub error_estimate: f64,
    /// Set when the weighted spectrum has not decayed by the band limit.
    pub divergent: bool,
}

/// Fraction of the weighted spectral mass in the top octave of the resolved
/// band above which the norm is reported divergent.
pub const HS_TAIL_FRACTION: f64 = 1e-2;

struct WeightedSpectrum {
    total: f64,
    top_octave: f64,
}

fn weighted_spectrum(values: &[f64], dx: f64, s: f64) -> WeightedSpectrum {
    let len = (4 * values.len()).next_power_of_two();
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(len, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    let dt = 2.0 * PI / (len as f64 * dx);
    let l1: f64 = values.iter().map(|v| v.abs()).sum::<f64>() * dx;
    // rounding floor of the transform
    let floor = 64.0 * f64::EPSILON * l1.max(f64::MIN_POSITIVE);
    let half = len / 2;
    let mags: Vec<f64> = (0..=half).map(|m| buf[m].norm() * dx).collect();
    let cut = mags.iter().rposition(|&a| a >= floor).unwrap_or(0);
    let t_cut = cut as f64 * dt;
    let mut total = 0.0;
    let mut top = 0.0;
    for (m, &a) in mags.iter().enumerate().take(cut + 1) {
        let t = m as f64 * dt;
        let mult = if m == 0 || m == half { 1.0 } else { 2.0 };
        let term = mult * (1.0 + 2.0 * t).powf(2.0 * s) * a * a * dt;
        total += term;
        if t > 0.5 * t_cut {
            top += term;
        }
    }
    WeightedSpectrum { total, top_octave: top }
}

/// `H_s` norm of a function sampled on a uniform grid of spacing `dx`,
/// zero outside the grid, with `f̂(t) = ∫ f(x) e^{-itx} dx`.
pub fn hs_norm(values: &[f64], dx: f64, s: f64) -> Result<HsNorm> {
    if values.len() < 4 || !(dx > 0.0) || !(s >= 0.0) {
        return Err(Error::Input("hs_norm needs at least 4 samples, dx > 0 and s >= 0".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("hs_norm samples must be finite".into()));
    }
    let fine = weighted_spectrum(values, dx, s);
    let coarse_values: Vec<f64> = values.iter().step_by(2).copied().collect();
    let coarse = weighted_spectrum(&coarse_values, 2.0 * dx, s);
    let norm = fine.total.sqrt();
    let divergent = fine.total > 0.0 && fine.top_octave > HS_TAIL_FRACTION * fine.total;
    Ok(HsNorm {
        norm,
        error_estimate: (norm - coarse.total.sqrt()).abs(),
        divergent,
    })
}

/// Writes `(Re z1, Im z1, Re z2, Im z2, Re Γ, Im Γ, branch_margin)` rows.
pub fn write_kernel_csv<W: Write>(mut out: W, header: &[String], rows: &[KernelValue]) -> Result<()> {
    for line in header {
        writeln!(out, "# {line}")?;
    }
    writeln!(out, "re_z1,im_z1,re_z2,im_z2,re_gamma,im_gamma,branch_margin")?;
    for k in rows {
        writeln!(
            out,
            "{},{},{},{},{:e},{:e},{:e}",
            k.z1.re, k.z1.im, k.z2.re, k.z2.im, k.gamma.re, k.gamma.im, k.branch_margin
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn goe_type() -> FluctuationParams {
        FluctuationParams::limit(1.0, 2.0, 1.0, 0.0, AtomicMeasure::dirac(0.0)).unwrap()
    }

    fn gue_deformed() -> FluctuationParams {
        let nu = AtomicMeasure::new(vec![(-1.0, 0.5), (1.0, 0.5)]).unwrap();
        FluctuationParams::limit(1.0, 1.0, 0.0, 0.0, nu).unwrap()
    }

    #[test]
    fn gue_bias_vanishes_exactly() {
        let p = gue_deformed();
        for z in [c(0.0, 2.0), c(1.0, 1.0), c(-1.0, 0.5), c(0.3, -0.8)] {
            assert_eq!(beta(&p, z).unwrap(), c(0.0, 0.0));
            assert_eq!(beta_tilde(&p, z).unwrap(), c(0.0, 0.0));
        }
    }

    #[test]
    fn goe_type_beta_at_2i() {
        let p = goe_type();
        let b = beta(&p, c(0.0, 2.0)).unwrap();
        // G = i(1 - √2), G' = -G²/(1 - G²), b = -G'G/(1 - G²)
        let g = c(0.0, 1.0 - 2f64.sqrt());
        let g1 = -g * g / (1.0 - g * g);
        let expected = -g1 * g / (1.0 - g * g);
        assert!((b - expected).norm() < 1e-12, "{b} vs {expected}");
        assert!((b.im - 0.051_776).abs() < 1e-5 && b.re.abs() < 1e-14);
        let bt = beta_tilde(&p, c(0.0, 2.0)).unwrap();
        let w1 = p.solve(c(0.0, 2.0)).unwrap().omega1;
        assert!((b - w1 * bt).norm() <= 1e-12 * b.norm());
    }

    #[test]
    fn kernel_symmetry_and_reflection() {
        let nu = AtomicMeasure::new(vec![(-1.0, 0.3), (0.5, 0.7)]).unwrap();
        let p = FluctuationParams::limit(1.2, 0.7, 0.4, -0.3, nu).unwrap();
        let (z1, z2) = (c(0.3, 1.1), c(-1.2, 0.6));
        let a = gamma_kernel(&p, z1, z2).unwrap().gamma;
        let b = gamma_kernel(&p, z2, z1).unwrap().gamma;
        assert!((a - b).norm() <= 1e-12 * a.norm());
        let r = gamma_kernel(&p, z1.conj(), z2.conj()).unwrap().gamma;
        assert_eq!(r, a.conj());
    }

    #[test]
    fn tau_zero_drops_log_term() {
        let p = gue_deformed();
        let (z1, z2) = (c(0.2, 1.0), c(1.0, -0.7));
        let s1 = p.solve(z1).unwrap();
        let s2 = p.solve(z2).unwrap();
        let IPartials { i, d1, d2, d12 } = i_partials(&p.nu, &s1, &s2);
        let a = 1.0 - i;
        let expected = d12 / a + d1 * d2 / (a * a);
        assert_eq!(gamma_kernel(&p, z1, z2).unwrap().gamma, expected);
    }

    #[test]
    fn semicircle_kernel_matches_bao_xie() {
        let p = FluctuationParams::limit(1.0, 1.0, 0.0, 0.0, AtomicMeasure::dirac(0.0)).unwrap();
        let z = c(0.0, 2.0);
        let k = gamma_kernel(&p, z, z.conj()).unwrap().gamma;
        let c0 = bao_xie_c0(1.0, 1.0, 0.0, 0.0, z, z.conj()).unwrap();
        let g = semicircle_stieltjes(1.0, z);
        let g1 = -g * g / (1.0 - g * g);
        let direct = g1 * g1.conj() / (1.0 - g.norm_sqr()).powi(2);
        assert!((k - c0).norm() <= 1e-9 * c0.norm());
        assert!((c0 - direct).norm() <= 1e-12 * c0.norm());
        assert!(c0.im.abs() < 1e-15 && c0.re > 0.0);
    }

    #[test]
    fn bao_xie_vanishing_and_guards() {
        assert_eq!(bao_xie_b0(1.3, 1.3, 0.0, 0.0, c(0.4, 0.9)).unwrap(), c(0.0, 0.0));
        assert!(bao_xie_b0(1.0, 1.0, 0.0, 0.0, c(1.0, 0.0)).is_err());
    }

    #[test]
    fn kernel_guard_rejects_small_margin() {
        // σ² I close to 1 near the edge of the semicircle
        let p = FluctuationParams::limit(1.0, 1.0, 0.0, 0.0, AtomicMeasure::dirac(0.0)).unwrap();
        let z = c(2.0, 1e-14);
        match gamma_kernel(&p, z, z) {
            Err(Error::NearSingularKernel(k)) => assert!(k.branch_margin <= BRANCH_MARGIN_GUARD),
            other => panic!("expected near-singular kernel, got {other:?}"),
        }
    }

    #[test]
    fn bias_bound_decreases_along_vertical_line() {
        let nu = AtomicMeasure::new(vec![(-1.0, 0.5), (1.0, 0.5)]).unwrap();
        let p = FluctuationParams::new(1.0, 1.0, 0.0, 0.0, nu, Mode::FiniteN { n: 500 }).unwrap();
        let mut last = f64::INFINITY;
        for k in 0..20 {
            let b = bias_bound(&p, c(0.0, 0.5 + 0.25 * k as f64)).unwrap();
            assert!(b >= 0.0 && b < last);
            last = b;
        }
        assert!(bias_bound(&gue_deformed(), c(0.0, 1.0)).is_err());
    }

    #[test]
    fn variance_extension_exact_pair() {
        let p = gue_deformed();
        let z = c(0.4, 1.0);
        let phi = TestFunction::real_resolvent_pair(z).unwrap();
        let v = extend_variance(&p, &phi, &PoleFitSpec::default()).unwrap();
        let g = |a, b| gamma_kernel(&p, a, b).unwrap().gamma;
        let expected = g(z, z) + 2.0 * g(z, z.conj()) + g(z.conj(), z.conj());
        assert!((v.value - expected.re).abs() <= 1e-14 * expected.norm());
        assert!(expected.im.abs() <= 1e-14 * expected.norm());
        assert_eq!(v.fit_residual, 0.0);
    }

    #[test]
    fn gaussian_hs_norm() {
        let dx = 0.01;
        let values: Vec<f64> = (-2000..=2000).map(|k| (-0.5 * (k as f64 * dx).powi(2)).exp()).collect();
        let h = hs_norm(&values, dx, 1.0).unwrap();
        // closed-form transform: |f̂(t)|² = 2π e^{-t²}
        let mut f = |t: f64| 2.0 * (1.0 + 2.0 * t).powi(2) * 2.0 * PI * (-t * t).exp();
        let exact = quad::adaptive(&mut f, 0.0, 40.0, 1e-13, 50).value.sqrt();
        assert!(!h.divergent);
        assert!((h.norm - exact).abs() <= 1e-4 * exact, "{} vs {exact}", h.norm);
        let doubled: Vec<f64> = values.iter().map(|v| 2.0 * v).collect();
        let h2 = hs_norm(&doubled, dx, 1.0).unwrap();
        assert!((h2.norm - 2.0 * h.norm).abs() <= 1e-12 * h.norm);
    }

    #[test]
    fn indicator_norm_diverges() {
        let dx = 1.0 / 512.0;
        let values: Vec<f64> = (-1024..=1024)
            .map(|k| if (k as f64 * dx).abs() <= 1.0 { 1.0 } else { 0.0 })
            .collect();
        assert!(hs_norm(&values, dx, 1.0).unwrap().divergent);
    }
}
