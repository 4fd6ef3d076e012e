//! Deformed Wigner ensembles `X = W + D` and their reproducible sampling.
//!
//! Parameters are stored at the limit scale (`sigma2 = N σ_N²`,
//! `s2 = N s_N²`, `tau = N τ_N`, `kappa = N² κ_N`); every named entry law
//! realizes these exactly at each finite `N`, so the finite-`N` and limit
//! parameters coincide.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use faer::Mat;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::freeconv::AtomicMeasure;
use crate::hermitian::HermitianMatrix;

/// Default bound on the absolute value of deformation atoms.
pub const DEFAULT_ATOM_BOUND: f64 = 1e3;
/// Relative tolerance for law moments against declared parameters.
pub const MOMENT_RTOL: f64 = 1e-12;

/// One support point of a discrete entry law, in `√N`-scaled units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscretePoint {
    pub re: f64,
    #[serde(default)]
    pub im: f64,
    pub weight: f64,
}

/// Finite-support entry law. Off-diagonal points may be complex, diagonal
/// points are real; both are given for `√N · W_ij`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomLaw {
    pub offdiag: Vec<DiscretePoint>,
    pub diag: Vec<DiscretePoint>,
}

impl CustomLaw {
    fn validate(&self) -> Result<()> {
        for (name, pts) in [("offdiag", &self.offdiag), ("diag", &self.diag)] {
            if pts.is_empty() {
                return Err(Error::Param(format!("custom law has empty {name} support")));
            }
            if pts.iter().any(|p| !(p.weight > 0.0) || !p.re.is_finite() || !p.im.is_finite()) {
                return Err(Error::Param(format!("custom law {name} support has invalid points")));
            }
            let total: f64 = pts.iter().map(|p| p.weight).sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Param(format!("custom law {name} weights sum to {total}")));
            }
        }
        if self.diag.iter().any(|p| p.im != 0.0) {
            return Err(Error::Param("diagonal support must be real".into()));
        }
        Ok(())
    }

    fn is_real(&self) -> bool {
        self.offdiag.iter().all(|p| p.im == 0.0)
    }
}

/// Law of the entries of `W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EntryLaw {
    /// Complex Gaussian off-diagonal, real Gaussian diagonal (GUE type).
    GaussianComplex,
    /// Real Gaussian entries (GOE type).
    GaussianReal,
    /// Off-diagonal `±σ_N`, diagonal `±s_N`.
    RademacherReal,
    /// Off-diagonal uniform on `{±σ_N, ±iσ_N}`, diagonal `±s_N`.
    RademacherComplexFourPoint,
    CustomDiscrete(CustomLaw),
}

/// Limit-scale moment parameters implied by a law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitMoments {
    pub sigma2: f64,
    pub s2: f64,
    pub tau: f64,
    pub kappa: f64,
}

/// Per-entry moments at a fixed `N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntryMoments {
    pub offdiag_mean: Complex64,
    /// `E|W_ij|²`
    pub offdiag_abs2: f64,
    /// `E W_ij²`
    pub offdiag_pseudo: Complex64,
    /// `E|W_ij|⁴`
    pub offdiag_abs4: f64,
    pub diag_mean: f64,
    /// `E W_ii²`
    pub diag_second: f64,
}

fn discrete_offdiag_moments(points: &[DiscretePoint], scale: f64) -> (Complex64, f64, Complex64, f64) {
    let mut mean = Complex64::new(0.0, 0.0);
    let mut abs2 = 0.0;
    let mut pseudo = Complex64::new(0.0, 0.0);
    let mut abs4 = 0.0;
    for p in points {
        let x = Complex64::new(p.re, p.im) * scale;
        mean += p.weight * x;
        abs2 += p.weight * x.norm_sqr();
        pseudo += p.weight * x * x;
        abs4 += p.weight * x.norm_sqr() * x.norm_sqr();
    }
    (mean, abs2, pseudo, abs4)
}

const PLUS_MINUS: [DiscretePoint; 2] = [
    DiscretePoint { re: 1.0, im: 0.0, weight: 0.5 },
    DiscretePoint { re: -1.0, im: 0.0, weight: 0.5 },
];
const FOUR_POINT: [DiscretePoint; 4] = [
    DiscretePoint { re: 1.0, im: 0.0, weight: 0.25 },
    DiscretePoint { re: -1.0, im: 0.0, weight: 0.25 },
    DiscretePoint { re: 0.0, im: 1.0, weight: 0.25 },
    DiscretePoint { re: 0.0, im: -1.0, weight: 0.25 },
];

impl EntryLaw {
    pub fn is_real(&self) -> bool {
        match self {
            Self::GaussianReal | Self::RademacherReal => true,
            Self::GaussianComplex | Self::RademacherComplexFourPoint => false,
            Self::CustomDiscrete(c) => c.is_real(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::GaussianComplex => "gaussian_complex",
            Self::GaussianReal => "gaussian_real",
            Self::RademacherReal => "rademacher_real",
            Self::RademacherComplexFourPoint => "rademacher_complex_four_point",
            Self::CustomDiscrete(_) => "custom_discrete",
        }
    }

    /// Default diagonal scale for a given off-diagonal `sigma2`.
    pub fn default_s2(&self, sigma2: f64) -> f64 {
        match self {
            Self::GaussianReal => 2.0 * sigma2,
            Self::CustomDiscrete(c) => c.diag.iter().map(|p| p.weight * p.re * p.re).sum(),
            _ => sigma2,
        }
    }

    /// `(tau, kappa)` implied by the law at off-diagonal scale `sigma2`.
    pub fn implied_tau_kappa(&self, sigma2: f64) -> (f64, f64) {
        let s4 = sigma2 * sigma2;
        match self {
            Self::GaussianComplex => (0.0, 0.0),
            Self::GaussianReal => (sigma2, 0.0),
            Self::RademacherReal => (sigma2, -2.0 * s4),
            Self::RademacherComplexFourPoint => (0.0, -s4),
            Self::CustomDiscrete(c) => {
                let (_, abs2, pseudo, abs4) = discrete_offdiag_moments(&c.offdiag, 1.0);
                (pseudo.re, abs4 - 2.0 * abs2 * abs2 - pseudo.re * pseudo.re)
            }
        }
    }

    /// Analytic per-entry moments at dimension `n`.
    pub fn entry_moments(&self, n: usize, sigma2: f64, s2: f64) -> EntryMoments {
        let nf = n as f64;
        let sn2 = sigma2 / nf;
        let dn2 = s2 / nf;
        let zero = Complex64::new(0.0, 0.0);
        match self {
            Self::GaussianComplex => EntryMoments {
                offdiag_mean: zero,
                offdiag_abs2: sn2,
                offdiag_pseudo: zero,
                offdiag_abs4: 2.0 * sn2 * sn2,
                diag_mean: 0.0,
                diag_second: dn2,
            },
            Self::GaussianReal => EntryMoments {
                offdiag_mean: zero,
                offdiag_abs2: sn2,
                offdiag_pseudo: Complex64::new(sn2, 0.0),
                offdiag_abs4: 3.0 * sn2 * sn2,
                diag_mean: 0.0,
                diag_second: dn2,
            },
            Self::RademacherReal | Self::RademacherComplexFourPoint => {
                let pts: &[DiscretePoint] = if matches!(self, Self::RademacherReal) {
                    &PLUS_MINUS
                } else {
                    &FOUR_POINT
                };
                let (mean, abs2, pseudo, abs4) = discrete_offdiag_moments(pts, sn2.sqrt());
                let (dmean, dsecond, _, _) = discrete_offdiag_moments(&PLUS_MINUS, dn2.sqrt());
                EntryMoments {
                    offdiag_mean: mean,
                    offdiag_abs2: abs2,
                    offdiag_pseudo: pseudo,
                    offdiag_abs4: abs4,
                    diag_mean: dmean.re,
                    diag_second: dsecond,
                }
            }
            Self::CustomDiscrete(c) => {
                let scale = nf.sqrt().recip();
                let (mean, abs2, pseudo, abs4) = discrete_offdiag_moments(&c.offdiag, scale);
                let (dmean, dsecond, _, _) = discrete_offdiag_moments(&c.diag, scale);
                EntryMoments {
                    offdiag_mean: mean,
                    offdiag_abs2: abs2,
                    offdiag_pseudo: pseudo,
                    offdiag_abs4: abs4,
                    diag_mean: dmean.re,
                    diag_second: dsecond,
                }
            }
        }
    }

    /// Mean and variance of `W 1_{|W| ≤ δ}` for an off-diagonal entry.
    fn truncated_offdiag(&self, n: usize, sigma2: f64, delta: f64) -> (Complex64, f64) {
        let sd = (sigma2 / n as f64).sqrt();
        match self {
            Self::GaussianComplex => {
                // |W|² is exponential with mean σ_N²
                let a = delta * delta / (sd * sd);
                let frac = -(-a).exp_m1() - a * (-a).exp();
                (Complex64::new(0.0, 0.0), sd * sd * frac.max(0.0))
            }
            Self::GaussianReal => (Complex64::new(0.0, 0.0), truncated_normal_second(sd, delta)),
            Self::RademacherReal => truncated_discrete(&PLUS_MINUS, sd, delta),
            Self::RademacherComplexFourPoint => truncated_discrete(&FOUR_POINT, sd, delta),
            Self::CustomDiscrete(c) => truncated_discrete(&c.offdiag, (n as f64).sqrt().recip(), delta),
        }
    }

    fn truncated_diag(&self, n: usize, s2: f64, delta: f64) -> (f64, f64) {
        let sd = (s2 / n as f64).sqrt();
        match self {
            Self::GaussianComplex | Self::GaussianReal => (0.0, truncated_normal_second(sd, delta)),
            Self::RademacherReal | Self::RademacherComplexFourPoint => {
                let (m, v) = truncated_discrete(&PLUS_MINUS, sd, delta);
                (m.re, v)
            }
            Self::CustomDiscrete(c) => {
                let (m, v) = truncated_discrete(&c.diag, (n as f64).sqrt().recip(), delta);
                (m.re, v)
            }
        }
    }
}

/// `E[X² 1_{|X|≤δ}]` for `X ~ N(0, sd²)`.
fn truncated_normal_second(sd: f64, delta: f64) -> f64 {
    let c = delta / sd;
    let frac = statrs::function::erf::erf(c * FRAC_1_SQRT_2) - c * (2.0 / PI).sqrt() * (-0.5 * c * c).exp();
    sd * sd * frac.max(0.0)
}

fn truncated_discrete(points: &[DiscretePoint], scale: f64, delta: f64) -> (Complex64, f64) {
    let mut mean = Complex64::new(0.0, 0.0);
    let mut second = 0.0;
    for p in points {
        let x = Complex64::new(p.re, p.im) * scale;
        if x.norm() <= delta {
            mean += p.weight * x;
            second += p.weight * x.norm_sqr();
        }
    }
    (mean, second - mean.norm_sqr())
}

/// Recipe for the `N` diagonal atoms of `D_N` as quantiles of a law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuantileSpec {
    /// All atoms at one point.
    Point { at: f64 },
    /// Quantiles of a finite atomic law given as `(location, weight)` pairs.
    Atoms { atoms: Vec<(f64, f64)> },
    /// Quantiles of the uniform law on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
}

impl QuantileSpec {
    /// `d_i = F^{-1}((i - 1/2) / N)`, `i = 1..N`.
    pub fn atoms(&self, n: usize) -> Result<Vec<f64>> {
        let u = |i: usize| (i as f64 + 0.5) / n as f64;
        match self {
            Self::Point { at } => Ok(vec![*at; n]),
            Self::Uniform { lo, hi } => {
                if !(hi > lo) {
                    return Err(Error::Param(format!("uniform quantile spec needs lo < hi, got [{lo}, {hi}]")));
                }
                Ok((0..n).map(|i| lo + (hi - lo) * u(i)).collect())
            }
            Self::Atoms { atoms } => {
                let measure = AtomicMeasure::new(atoms.clone())?;
                let mut cdf = Vec::with_capacity(measure.atoms().len());
                let mut acc = 0.0;
                for &(x, w) in measure.atoms() {
                    acc += w;
                    cdf.push((x, acc));
                }
                Ok((0..n)
                    .map(|i| {
                        let q = u(i);
                        cdf.iter().find(|c| c.1 >= q).unwrap_or(&cdf[cdf.len() - 1]).0
                    })
                    .collect())
            }
        }
    }
}

/// Diagonal deformation `D_N`: `N` real atoms, sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Deformation {
    atoms: Vec<f64>,
    spec: Option<QuantileSpec>,
}

impl Deformation {
    pub fn from_atoms(mut atoms: Vec<f64>) -> Result<Self> {
        if atoms.iter().any(|a| !a.is_finite()) {
            return Err(Error::Param("deformation atoms must be finite".into()));
        }
        atoms.sort_by(f64::total_cmp);
        Ok(Self { atoms, spec: None })
    }

    pub fn from_spec(spec: QuantileSpec, n: usize) -> Result<Self> {
        let mut d = Self::from_atoms(spec.atoms(n)?)?;
        d.spec = Some(spec);
        Ok(d)
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            atoms: vec![0.0; n],
            spec: Some(QuantileSpec::Point { at: 0.0 }),
        }
    }

    /// Half the atoms at `-a`, half at `+a` (`n` even).
    pub fn symmetric_pair(n: usize, a: f64) -> Result<Self> {
        Self::from_spec(
            QuantileSpec::Atoms {
                atoms: vec![(-a, 0.5), (a, 0.5)],
            },
            n,
        )
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn spec(&self) -> Option<&QuantileSpec> {
        self.spec.as_ref()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Spectral measure `ν_N` of `D_N`.
    pub fn measure(&self) -> Result<AtomicMeasure> {
        AtomicMeasure::from_points(&self.atoms)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct DeformationConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    atoms: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quantile_spec: Option<QuantileSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamsConfig {
    n: usize,
    sigma2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    s2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kappa: Option<f64>,
    entry_law: EntryLaw,
    #[serde(default)]
    deformation: DeformationConfig,
}

/// Full parameter set of a deformed Wigner ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsConfig", into = "ParamsConfig")]
pub struct EnsembleParams {
    pub n: usize,
    pub sigma2: f64,
    pub s2: f64,
    pub tau: f64,
    pub kappa: f64,
    pub entry_law: EntryLaw,
    pub deformation: Deformation,
}

impl TryFrom<ParamsConfig> for EnsembleParams {
    type Error = Error;

    fn try_from(c: ParamsConfig) -> Result<Self> {
        let deformation = match (c.deformation.atoms, c.deformation.quantile_spec) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "deformation: give either atoms or quantile_spec, not both".into(),
                ))
            }
            (Some(atoms), None) => Deformation::from_atoms(atoms)?,
            (None, Some(spec)) => Deformation::from_spec(spec, c.n)?,
            (None, None) => Deformation::zeros(c.n),
        };
        let s2 = c.s2.unwrap_or_else(|| c.entry_law.default_s2(c.sigma2));
        let (tau, kappa) = c.entry_law.implied_tau_kappa(c.sigma2);
        let params = Self {
            n: c.n,
            sigma2: c.sigma2,
            s2,
            tau: c.tau.unwrap_or(tau),
            kappa: c.kappa.unwrap_or(kappa),
            entry_law: c.entry_law,
            deformation,
        };
        params.validate()?;
        Ok(params)
    }
}

impl From<EnsembleParams> for ParamsConfig {
    fn from(p: EnsembleParams) -> Self {
        let deformation = match p.deformation.spec {
            Some(spec) => DeformationConfig {
                atoms: None,
                quantile_spec: Some(spec),
            },
            None => DeformationConfig {
                atoms: Some(p.deformation.atoms),
                quantile_spec: None,
            },
        };
        Self {
            n: p.n,
            sigma2: p.sigma2,
            s2: Some(p.s2),
            tau: Some(p.tau),
            kappa: Some(p.kappa),
            entry_law: p.entry_law,
            deformation,
        }
    }
}

/// `|got - want| <= rtol * max(|want|, scale)`; `scale` sets the floor for
/// zero targets.
fn moments_agree(got: f64, want: f64, scale: f64) -> bool {
    (got - want).abs() <= MOMENT_RTOL * want.abs().max(scale)
}

impl EnsembleParams {
    /// Parameters for `law` with `tau`, `kappa` derived from the law.
    pub fn new(n: usize, entry_law: EntryLaw, sigma2: f64, s2: f64, deformation: Deformation) -> Result<Self> {
        let (tau, kappa) = entry_law.implied_tau_kappa(sigma2);
        let p = Self {
            n,
            sigma2,
            s2,
            tau,
            kappa,
            entry_law,
            deformation,
        };
        p.validate()?;
        Ok(p)
    }

    /// Law with its default diagonal scale.
    pub fn with_law(n: usize, entry_law: EntryLaw, sigma2: f64, deformation: Deformation) -> Result<Self> {
        let s2 = entry_law.default_s2(sigma2);
        Self::new(n, entry_law, sigma2, s2, deformation)
    }

    pub fn gue(n: usize, sigma2: f64, deformation: Deformation) -> Result<Self> {
        Self::with_law(n, EntryLaw::GaussianComplex, sigma2, deformation)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Param("dimension must be positive".into()));
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::Param(format!("sigma2 = {} must be positive", self.sigma2)));
        }
        if !(self.s2 > 0.0) || !self.s2.is_finite() {
            return Err(Error::Param(format!("s2 = {} must be positive", self.s2)));
        }
        if !self.tau.is_finite() || !self.kappa.is_finite() {
            return Err(Error::Param("tau and kappa must be finite".into()));
        }
        if self.m_n() < 0.0 {
            return Err(Error::Param(format!(
                "fourth moment m_N = {} is negative (kappa too small)",
                self.m_n()
            )));
        }
        if self.deformation.len() != self.n {
            return Err(Error::Param(format!(
                "deformation has {} atoms, expected {}",
                self.deformation.len(),
                self.n
            )));
        }
        if let Some(a) = self.deformation.atoms().iter().find(|a| a.abs() > DEFAULT_ATOM_BOUND) {
            return Err(Error::Param(format!("deformation atom {a} exceeds bound {DEFAULT_ATOM_BOUND}")));
        }
        if let EntryLaw::CustomDiscrete(c) = &self.entry_law {
            c.validate()?;
        }
        self.check_law_moments()
    }

    /// Checks the law's analytic moments against the declared parameters.
    fn check_law_moments(&self) -> Result<()> {
        let m = self.entry_law.entry_moments(self.n, self.sigma2, self.s2);
        let s2 = self.sigma_n2();
        let checks = [
            ("offdiagonal mean", m.offdiag_mean.norm(), 0.0, s2.sqrt()),
            ("diagonal mean", m.diag_mean, 0.0, self.s_n2().sqrt()),
            ("E|W|^2", m.offdiag_abs2, s2, s2),
            ("Im E W^2", m.offdiag_pseudo.im, 0.0, s2),
            ("E W^2", m.offdiag_pseudo.re, self.tau_n(), s2),
            ("E|W|^4", m.offdiag_abs4, self.m_n(), s2 * s2),
            ("E W_ii^2", m.diag_second, self.s_n2(), self.s_n2()),
        ];
        for (what, got, want, scale) in checks {
            if !moments_agree(got, want, scale) {
                return Err(Error::Param(format!(
                    "law {} gives {what} = {got:e}, parameters imply {want:e}",
                    self.entry_law.name()
                )));
            }
        }
        Ok(())
    }

    pub fn sigma_n2(&self) -> f64 {
        self.sigma2 / self.n as f64
    }

    pub fn s_n2(&self) -> f64 {
        self.s2 / self.n as f64
    }

    pub fn tau_n(&self) -> f64 {
        self.tau / self.n as f64
    }

    pub fn kappa_n(&self) -> f64 {
        self.kappa / (self.n as f64 * self.n as f64)
    }

    /// `m_N = E|W_ij|⁴ = κ_N + 2σ_N⁴ + τ_N²`.
    pub fn m_n(&self) -> f64 {
        let s = self.sigma_n2();
        self.kappa_n() + 2.0 * s * s + self.tau_n() * self.tau_n()
    }

    pub fn nu_n(&self) -> Result<AtomicMeasure> {
        self.deformation.measure()
    }

    /// Hex digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("parameters serialize");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedPath {
    pub master_seed: u64,
    pub index: u64,
}

/// Keyed counter-based stream: the ChaCha key comes from the master seed and
/// the stream id is the sample index, so samples are independent of the
/// order in which they are drawn.
pub fn stream_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// One draw of `X_N = W_N + D_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerSample {
    pub matrix: HermitianMatrix,
    /// Diagonal of `W_N` (the matrix diagonal minus the deformation).
    pub diag_noise: Vec<f64>,
    pub seed_path: SeedPath,
    pub params_hash: String,
}

impl WignerSample {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }
}

/// Validated parameters with the digest precomputed, for repeated draws.
#[derive(Debug, Clone)]
pub struct Sampler {
    params: EnsembleParams,
    hash: String,
}

impl Sampler {
    pub fn new(params: EnsembleParams) -> Result<Self> {
        params.validate()?;
        let hash = params.hash();
        Ok(Self { params, hash })
    }

    pub fn params(&self) -> &EnsembleParams {
        &self.params
    }

    pub fn params_hash(&self) -> &str {
        &self.hash
    }

    pub fn sample(&self, master_seed: u64, index: u64) -> WignerSample {
        let p = &self.params;
        let n = p.n;
        let sd = p.sigma_n2().sqrt();
        let dd = p.s_n2().sqrt();
        let mut rng = stream_rng(master_seed, index);
        let deformation = p.deformation.atoms();
        let mut diag_noise = vec![0.0; n];
        let matrix = if p.entry_law.is_real() {
            let mut m = Mat::<f64>::zeros(n, n);
            for i in 0..n {
                let w = draw_diag(&p.entry_law, &mut rng, dd, n);
                diag_noise[i] = w;
                m[(i, i)] = w + deformation[i];
                for j in i + 1..n {
                    let x = draw_offdiag(&p.entry_law, &mut rng, sd, n).re;
                    m[(i, j)] = x;
                    m[(j, i)] = x;
                }
            }
            HermitianMatrix::Real(m)
        } else {
            let mut m = Mat::<Complex64>::zeros(n, n);
            for i in 0..n {
                let w = draw_diag(&p.entry_law, &mut rng, dd, n);
                diag_noise[i] = w;
                m[(i, i)] = Complex64::new(w + deformation[i], 0.0);
                for j in i + 1..n {
                    let x = draw_offdiag(&p.entry_law, &mut rng, sd, n);
                    m[(i, j)] = x;
                    m[(j, i)] = x.conj();
                }
            }
            HermitianMatrix::Complex(m)
        };
        WignerSample {
            matrix,
            diag_noise,
            seed_path: SeedPath { master_seed, index },
            params_hash: self.hash.clone(),
        }
    }
}

fn draw_discrete<R: Rng>(rng: &mut R, points: &[DiscretePoint]) -> Complex64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for p in points {
        acc += p.weight;
        if u < acc {
            return Complex64::new(p.re, p.im);
        }
    }
    let last = points[points.len() - 1];
    Complex64::new(last.re, last.im)
}

fn draw_offdiag<R: Rng>(law: &EntryLaw, rng: &mut R, sd: f64, n: usize) -> Complex64 {
    match law {
        EntryLaw::GaussianComplex => {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im) * (sd * FRAC_1_SQRT_2)
        }
        EntryLaw::GaussianReal => Complex64::new(sd * rng.sample::<f64, _>(StandardNormal), 0.0),
        EntryLaw::RademacherReal => Complex64::new(if rng.random::<bool>() { sd } else { -sd }, 0.0),
        EntryLaw::RademacherComplexFourPoint => match rng.random_range(0..4u8) {
            0 => Complex64::new(sd, 0.0),
            1 => Complex64::new(-sd, 0.0),
            2 => Complex64::new(0.0, sd),
            _ => Complex64::new(0.0, -sd),
        },
        EntryLaw::CustomDiscrete(c) => draw_discrete(rng, &c.offdiag) / (n as f64).sqrt(),
    }
}

fn draw_diag<R: Rng>(law: &EntryLaw, rng: &mut R, dd: f64, n: usize) -> f64 {
    match law {
        EntryLaw::GaussianComplex | EntryLaw::GaussianReal => dd * rng.sample::<f64, _>(StandardNormal),
        EntryLaw::RademacherReal | EntryLaw::RademacherComplexFourPoint => {
            if rng.random::<bool>() {
                dd
            } else {
                -dd
            }
        }
        EntryLaw::CustomDiscrete(c) => draw_discrete(rng, &c.diag).re / (n as f64).sqrt(),
    }
}

/// Draws sample `index` of the stream keyed by `master_seed`.
pub fn sample(params: &EnsembleParams, master_seed: u64, index: u64) -> Result<WignerSample> {
    Ok(Sampler::new(params.clone())?.sample(master_seed, index))
}

/// Default truncation level `δ_N = 1 / log N`.
pub fn choose_delta(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::Param(format!("truncation level needs N >= 2, got {n}")));
    }
    Ok(1.0 / (n as f64).ln())
}

/// Truncates the entries of `W` at `delta`, recenters them by the law's
/// truncated mean and rescales to restore `σ_N²` (off-diagonal) and `s_N²`
/// (diagonal). The deformation is left untouched.
pub fn truncate_center_homogenize(
    sample: &WignerSample,
    params: &EnsembleParams,
    delta: f64,
) -> Result<WignerSample> {
    if !(delta > 0.0) {
        return Err(Error::Param(format!("truncation level {delta} must be positive")));
    }
    if sample.params_hash != params.hash() {
        return Err(Error::Param("sample was drawn from different parameters".into()));
    }
    let n = params.n;
    let law = &params.entry_law;
    let (off_mean, off_var) = law.truncated_offdiag(n, params.sigma2, delta);
    let (diag_mean, diag_var) = law.truncated_diag(n, params.s2, delta);
    if !(off_var > 0.0) {
        return Err(Error::DegenerateTruncation(format!(
            "off-diagonal truncated variance is {off_var:e} at delta = {delta}"
        )));
    }
    if !(diag_var > 0.0) {
        return Err(Error::DegenerateTruncation(format!(
            "diagonal truncated variance is {diag_var:e} at delta = {delta}"
        )));
    }
    let off_scale = params.sigma_n2().sqrt() / off_var.sqrt();
    let diag_scale = params.s_n2().sqrt() / diag_var.sqrt();
    let cut = |x: Complex64| if x.norm() <= delta { x } else { Complex64::new(0.0, 0.0) };
    let deformation = params.deformation.atoms();
    let diag_noise: Vec<f64> = sample
        .diag_noise
        .iter()
        .map(|&w| {
            let w = if w.abs() <= delta { w } else { 0.0 };
            diag_scale * (w - diag_mean)
        })
        .collect();
    let real = sample.matrix.is_real() && off_mean.im == 0.0;
    let matrix = if real {
        let mut m = Mat::<f64>::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = diag_noise[i] + deformation[i];
            for j in i + 1..n {
                let x = off_scale * (cut(sample.matrix.get(i, j)) - off_mean).re;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
        }
        HermitianMatrix::Real(m)
    } else {
        let mut m = Mat::<Complex64>::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(diag_noise[i] + deformation[i], 0.0);
            for j in i + 1..n {
                let x = (cut(sample.matrix.get(i, j)) - off_mean) * off_scale;
                m[(i, j)] = x;
                m[(j, i)] = x.conj();
            }
        }
        HermitianMatrix::Complex(m)
    };
    Ok(WignerSample {
        matrix,
        diag_noise,
        seed_path: sample.seed_path,
        params_hash: sample.params_hash.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gue(n: usize) -> EnsembleParams {
        EnsembleParams::gue(n, 1.0, Deformation::zeros(n)).unwrap()
    }

    #[test]
    fn sampling_is_deterministic_and_hermitian() {
        let p = gue(2);
        let a = sample(&p, 7, 0).unwrap();
        let b = sample(&p, 7, 0).unwrap();
        assert_eq!(a, b);
        assert!(a.matrix.is_exactly_hermitian());
        let c = sample(&p, 7, 1).unwrap();
        assert_ne!(a.matrix, c.matrix);
    }

    #[test]
    fn rademacher_entries_are_exact() {
        let p = EnsembleParams::with_law(100, EntryLaw::RademacherReal, 1.0, Deformation::zeros(100)).unwrap();
        let s = sample(&p, 3, 0).unwrap();
        for i in 0..100 {
            for j in 0..100 {
                if i != j {
                    let x = s.matrix.get(i, j);
                    assert!(x == Complex64::new(0.1, 0.0) || x == Complex64::new(-0.1, 0.0), "{x}");
                }
            }
        }
    }

    #[test]
    fn named_law_parameters() {
        let d = || Deformation::zeros(10);
        let goe = EnsembleParams::with_law(10, EntryLaw::GaussianReal, 1.5, d()).unwrap();
        assert_eq!((goe.tau, goe.kappa, goe.s2), (1.5, 0.0, 3.0));
        let rad = EnsembleParams::with_law(10, EntryLaw::RademacherReal, 2.0, d()).unwrap();
        assert_eq!((rad.tau, rad.kappa), (2.0, -8.0));
        let four = EnsembleParams::with_law(10, EntryLaw::RademacherComplexFourPoint, 2.0, d()).unwrap();
        assert_eq!((four.tau, four.kappa), (0.0, -4.0));
    }

    #[test]
    fn rejects_inconsistent_parameters() {
        let mut p = gue(10);
        p.kappa = -5.0;
        assert!(matches!(p.validate(), Err(Error::Param(_))));
        let mut p = gue(10);
        p.tau = 0.5;
        assert!(p.validate().is_err());
        assert!(EnsembleParams::gue(10, 1.0, Deformation::zeros(9)).is_err());
        assert!(EnsembleParams::gue(10, -1.0, Deformation::zeros(10)).is_err());
        let big = Deformation::from_atoms(vec![1e4; 10]).unwrap();
        assert!(EnsembleParams::gue(10, 1.0, big).is_err());
    }

    #[test]
    fn quantile_atoms() {
        let d = Deformation::symmetric_pair(6, 1.0).unwrap();
        assert_eq!(d.atoms(), &[-1.0, -1.0, -1.0, 1.0, 1.0, 1.0]);
        let u = QuantileSpec::Uniform { lo: 0.0, hi: 1.0 }.atoms(4).unwrap();
        assert_eq!(u, vec![0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn choose_delta_schedule() {
        assert!((choose_delta(8).unwrap() - 0.480_898_346_962_987_8).abs() < 1e-12);
        for n in 2..2000 {
            assert!(choose_delta(n).unwrap() >= choose_delta(n + 1).unwrap());
        }
        assert!(choose_delta(1).is_err());
    }

    #[test]
    fn truncation_identity_for_bounded_law() {
        let p = EnsembleParams::with_law(50, EntryLaw::RademacherReal, 1.0, Deformation::symmetric_pair(50, 1.0).unwrap())
            .unwrap();
        let s = sample(&p, 11, 4).unwrap();
        let t = truncate_center_homogenize(&s, &p, 0.5).unwrap();
        assert_eq!(s.matrix, t.matrix);
    }

    #[test]
    fn truncation_below_support_is_degenerate() {
        let p = EnsembleParams::with_law(50, EntryLaw::RademacherReal, 1.0, Deformation::zeros(50)).unwrap();
        let s = sample(&p, 11, 4).unwrap();
        assert!(matches!(
            truncate_center_homogenize(&s, &p, 0.01),
            Err(Error::DegenerateTruncation(_))
        ));
    }

    #[test]
    fn params_toml_round_trip() {
        let p = EnsembleParams::with_law(8, EntryLaw::GaussianReal, 1.0, Deformation::symmetric_pair(8, 0.5).unwrap())
            .unwrap();
        let text = p.to_toml_string().unwrap();
        let q = EnsembleParams::from_toml_str(&text).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.hash(), q.hash());
    }
}
