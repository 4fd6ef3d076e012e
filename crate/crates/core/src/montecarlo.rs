//! Reproducible Monte Carlo estimation of the mean, bias, covariance and
//! Gaussianity of resolvent traces and linear statistics.
//!
//! Samples are processed in parallel but every reduction runs over the
//! per-sample results in index order, so a report depends only on the plan.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{choose_delta, truncate_center_homogenize, EnsembleParams, Sampler};
use crate::error::{Error, Result};
use crate::spectral::{self, Spectrum};
use crate::stats::{
    covariance_estimate, ks_normal, mean_estimate, pairwise_sum, shape_estimate, ComplexEstimate, KsResult,
    RealEstimate, ShapeEstimate, DEGENERATE_VARIANCE,
};
use crate::testfn::TestFunction;
use crate::theory::{self, FluctuationParams};

/// Default minimum distance of grid points from the real axis.
pub const DEFAULT_IM_FLOOR: f64 = 0.1;
/// Samples needed before distributional tests are meaningful.
pub const MIN_SAMPLES_FOR_NORMALITY: usize = 500;

fn default_im_floor() -> f64 {
    DEFAULT_IM_FLOOR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    /// Truncation level; `1 / log N` when absent.
    #[serde(default)]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub params: EnsembleParams,
    pub samples: usize,
    pub z_grid: Vec<Complex64>,
    #[serde(default)]
    pub test_functions: Vec<TestFunction>,
    pub master_seed: u64,
    #[serde(default)]
    pub truncation: Option<Truncation>,
    #[serde(default = "default_im_floor")]
    pub im_floor: f64,
}

impl ExperimentPlan {
    pub fn new(params: EnsembleParams, samples: usize, z_grid: Vec<Complex64>, master_seed: u64) -> Self {
        Self {
            params,
            samples,
            z_grid,
            test_functions: Vec::new(),
            master_seed,
            truncation: None,
            im_floor: DEFAULT_IM_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.samples < 3 {
            return Err(Error::Config(format!("need at least 3 samples, got {}", self.samples)));
        }
        if self.z_grid.is_empty() {
            return Err(Error::Config("z grid is empty".into()));
        }
        if let Some(z) = self.z_grid.iter().find(|z| !(z.im.abs() >= self.im_floor) || !z.is_finite()) {
            return Err(Error::Config(format!("grid point {z} is closer than {} to the real axis", self.im_floor)));
        }
        Ok(())
    }

    fn delta(&self) -> Result<Option<f64>> {
        match &self.truncation {
            None => Ok(None),
            Some(Truncation { delta: Some(d) }) => Ok(Some(*d)),
            Some(Truncation { delta: None }) => choose_delta(self.params.n).map(Some),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZEstimate {
    pub z: Complex64,
    pub mean_trace: ComplexEstimate,
    /// `N G_{ρ_N}(z)`
    pub deterministic_trace: Complex64,
    /// `mean Tr R(z) - N G_{ρ_N}(z)`
    pub bias_hat: ComplexEstimate,
    /// `z - σ_N² mean Tr R(z)`
    pub omega_tilde: Complex64,
    /// `E|Tr R(z) - E Tr R(z)|²`
    pub variance: RealEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEstimate {
    pub z1: Complex64,
    pub z2: Complex64,
    /// `Cov(Tr R(z1), Tr R(z2))`, no conjugation.
    pub covariance: ComplexEstimate,
    /// `Cov(Tr R(z1), conj Tr R(z2))`
    pub conjugated_covariance: ComplexEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartSummary {
    pub ks: KsResult,
    pub shape: ShapeEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticSummary {
    pub id: String,
    pub mean: ComplexEstimate,
    /// `E|N(φ) - E N(φ)|²`
    pub variance: f64,
    /// Centered values, one per sample.
    pub centered: Vec<Complex64>,
    pub degenerate: bool,
    pub real_part: Option<PartSummary>,
    pub imaginary_part: Option<PartSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub master_seed: u64,
    pub samples: usize,
    pub params_hash: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub stamp: Stamp,
    pub params: EnsembleParams,
    pub truncation_delta: Option<f64>,
    pub z: Vec<ZEstimate>,
    pub pairs: Vec<PairEstimate>,
    pub statistics: Vec<StatisticSummary>,
}

impl EstimatorReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Per-z table joined with the finite-`N` theory values.
    pub fn write_per_z_csv<W: Write>(&self, mut out: W, header: &[String], theory: &FluctuationParams) -> Result<()> {
        for line in header {
            writeln!(out, "# {line}")?;
        }
        writeln!(
            out,
            "re_z,im_z,mean_re,mean_im,bias_hat_re,bias_hat_im,beta_theory_re,beta_theory_im,se_re,se_im,var_hat,var_se,gamma_theory,bias_bound,variance_bound"
        )?;
        let nan = Complex64::new(f64::NAN, f64::NAN);
        for e in &self.z {
            let beta = theory::beta(theory, e.z).unwrap_or(nan);
            let gamma = theory::gamma_kernel(theory, e.z, e.z.conj()).map_or(f64::NAN, |k| k.gamma.re);
            let bound = theory::bias_bound(theory, e.z).unwrap_or(f64::NAN);
            writeln!(
                out,
                "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                e.z.re,
                e.z.im,
                e.mean_trace.value.re,
                e.mean_trace.value.im,
                e.bias_hat.value.re,
                e.bias_hat.value.im,
                beta.re,
                beta.im,
                e.bias_hat.se_re,
                e.bias_hat.se_im,
                e.variance.value,
                e.variance.se,
                gamma,
                bound,
                variance_bound_delta0(&self.params, e.z),
            )?;
        }
        Ok(())
    }
}

struct SampleOutput {
    traces: Vec<Complex64>,
    statistics: Vec<Complex64>,
}

fn with_pool<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(job))
}

/// Runs the plan on `threads` workers (0 picks the rayon default). The report
/// does not depend on `threads`.
pub fn run(plan: &ExperimentPlan, threads: usize) -> Result<EstimatorReport> {
    plan.validate()?;
    let sampler = Sampler::new(plan.params.clone())?;
    let delta = plan.delta()?;
    let process = |index: u64| -> Result<SampleOutput> {
        let mut sample = sampler.sample(plan.master_seed, index);
        if let Some(d) = delta {
            sample = truncate_center_homogenize(&sample, &plan.params, d)?;
        }
        let spec = spectral::eigenvalues(&sample)?;
        Ok(SampleOutput {
            traces: plan
                .z_grid
                .iter()
                .map(|&z| spectral::trace_resolvent(&spec, z))
                .collect::<Result<_>>()?,
            statistics: plan
                .test_functions
                .iter()
                .map(|f| spectral::linear_statistic(&spec, f).value)
                .collect(),
        })
    };
    let outputs: Vec<Result<SampleOutput>> =
        with_pool(threads, || (0..plan.samples as u64).into_par_iter().map(process).collect())?;
    let mut samples = Vec::with_capacity(outputs.len());
    for (index, out) in outputs.into_iter().enumerate() {
        samples.push(out.map_err(|e| Error::Sample {
            index: index as u64,
            source: Box::new(e),
        })?);
    }
    assemble(plan, delta, &samples)
}

fn column<F: Fn(&SampleOutput) -> Complex64>(samples: &[SampleOutput], f: F) -> Vec<Complex64> {
    samples.iter().map(f).collect()
}

fn part_summary(values: &[f64]) -> Option<PartSummary> {
    Some(PartSummary {
        ks: ks_normal(values)?,
        shape: shape_estimate(values),
    })
}

fn assemble(plan: &ExperimentPlan, delta: Option<f64>, samples: &[SampleOutput]) -> Result<EstimatorReport> {
    let p = &plan.params;
    let n = p.n as f64;
    let fluct = FluctuationParams::finite_n(p)?;
    let traces: Vec<Vec<Complex64>> = (0..plan.z_grid.len())
        .map(|k| column(samples, |s| s.traces[k]))
        .collect();
    let mut z_rows = Vec::with_capacity(plan.z_grid.len());
    for (k, &z) in plan.z_grid.iter().enumerate() {
        let mean_trace = mean_estimate(&traces[k]);
        let det = n * fluct.solve(z)?.g;
        let conj: Vec<Complex64> = traces[k].iter().map(|t| t.conj()).collect();
        let var = covariance_estimate(&traces[k], &conj);
        z_rows.push(ZEstimate {
            z,
            mean_trace,
            deterministic_trace: det,
            bias_hat: ComplexEstimate {
                value: mean_trace.value - det,
                ..mean_trace
            },
            omega_tilde: z - p.sigma_n2() * mean_trace.value,
            variance: RealEstimate {
                value: var.value.re,
                se: var.se_re,
            },
        });
    }
    let mut pairs = Vec::new();
    for i in 0..plan.z_grid.len() {
        for j in i..plan.z_grid.len() {
            let conj: Vec<Complex64> = traces[j].iter().map(|t| t.conj()).collect();
            pairs.push(PairEstimate {
                z1: plan.z_grid[i],
                z2: plan.z_grid[j],
                covariance: covariance_estimate(&traces[i], &traces[j]),
                conjugated_covariance: covariance_estimate(&traces[i], &conj),
            });
        }
    }
    let mut statistics = Vec::with_capacity(plan.test_functions.len());
    for (k, f) in plan.test_functions.iter().enumerate() {
        let values = column(samples, |s| s.statistics[k]);
        let mean = mean_estimate(&values);
        let centered: Vec<Complex64> = values.iter().map(|v| v - mean.value).collect();
        let sq: Vec<f64> = centered.iter().map(|c| c.norm_sqr()).collect();
        let variance = pairwise_sum(&sq) / (values.len() as f64 - 1.0);
        let degenerate = !(variance >= DEGENERATE_VARIANCE);
        let re: Vec<f64> = centered.iter().map(|c| c.re).collect();
        let im: Vec<f64> = centered.iter().map(|c| c.im).collect();
        statistics.push(StatisticSummary {
            id: f.id().to_string(),
            mean,
            variance,
            degenerate,
            real_part: if degenerate { None } else { part_summary(&re) },
            imaginary_part: if degenerate || f.is_real() { None } else { part_summary(&im) },
            centered,
        });
    }
    Ok(EstimatorReport {
        stamp: Stamp {
            master_seed: plan.master_seed,
            samples: plan.samples,
            params_hash: p.hash(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
        params: p.clone(),
        truncation_delta: delta,
        z: z_rows,
        pairs,
        statistics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasComparison {
    pub z: Complex64,
    pub bias_hat: ComplexEstimate,
    pub beta: Complex64,
    /// `|bias_hat - β| / SE`
    pub z_score: f64,
    pub bound: f64,
}

/// Compares the empirical bias with `β(z)` and the explicit bound.
pub fn bias_check(report: &EstimatorReport, theory: &FluctuationParams) -> Result<Vec<BiasComparison>> {
    report
        .z
        .iter()
        .map(|e| {
            let beta = theory::beta(theory, e.z)?;
            Ok(BiasComparison {
                z: e.z,
                bias_hat: e.bias_hat,
                beta,
                z_score: e.bias_hat.z_score(beta),
                bound: theory::bias_bound(theory, e.z)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTheory {
    pub z1: Complex64,
    pub z2: Complex64,
    /// `Γ(z1, z2)`
    pub gamma: Complex64,
    /// `Γ(z1, conj z2)`
    pub gamma_conjugated: Complex64,
}

/// Kernel values for every pair `i <= j` of the grid, in report order.
pub fn covariance_theory(theory: &FluctuationParams, z_grid: &[Complex64]) -> Result<Vec<PairTheory>> {
    let mut out = Vec::new();
    for i in 0..z_grid.len() {
        for j in i..z_grid.len() {
            let (z1, z2) = (z_grid[i], z_grid[j]);
            out.push(PairTheory {
                z1,
                z2,
                gamma: theory::gamma_kernel(theory, z1, z2)?.gamma,
                gamma_conjugated: theory::gamma_kernel(theory, z1, z2.conj())?.gamma,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceComparison {
    pub z1: Complex64,
    pub z2: Complex64,
    pub empirical: ComplexEstimate,
    pub gamma: Complex64,
    /// `|empirical - Γ| / SE`
    pub ratio: f64,
    pub empirical_conjugated: ComplexEstimate,
    pub gamma_conjugated: Complex64,
    pub ratio_conjugated: f64,
    /// Non-conjugated ratio above 3.
    pub flagged: bool,
}

/// Joins report pairs with theory values; the grids must agree exactly.
pub fn covariance_check(report: &EstimatorReport, theory: &[PairTheory]) -> Result<Vec<CovarianceComparison>> {
    if report.pairs.len() != theory.len() {
        return Err(Error::Config(format!(
            "report has {} covariance pairs, theory table has {}",
            report.pairs.len(),
            theory.len()
        )));
    }
    report
        .pairs
        .iter()
        .zip(theory)
        .map(|(e, t)| {
            if e.z1 != t.z1 || e.z2 != t.z2 {
                return Err(Error::Config(format!(
                    "grid mismatch: report pair ({}, {}) vs theory pair ({}, {})",
                    e.z1, e.z2, t.z1, t.z2
                )));
            }
            let ratio = e.covariance.z_score(t.gamma);
            Ok(CovarianceComparison {
                z1: e.z1,
                z2: e.z2,
                empirical: e.covariance,
                gamma: t.gamma,
                ratio,
                empirical_conjugated: e.conjugated_covariance,
                gamma_conjugated: t.gamma_conjugated,
                ratio_conjugated: e.conjugated_covariance.z_score(t.gamma_conjugated),
                flagged: !(ratio <= 3.0),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityRow {
    pub id: String,
    /// `re` or `im`
    pub part: String,
    pub degenerate: bool,
    /// Fewer samples than distributional tests need.
    pub insufficient: bool,
    pub ks: Option<KsResult>,
    pub shape: Option<ShapeEstimate>,
}

pub fn normality_check(report: &EstimatorReport) -> Vec<NormalityRow> {
    let insufficient = report.stamp.samples < MIN_SAMPLES_FOR_NORMALITY;
    let mut rows = Vec::new();
    for s in &report.statistics {
        let parts = [("re", &s.real_part), ("im", &s.imaginary_part)];
        for (name, part) in parts {
            if name == "im" && part.is_none() && !s.degenerate {
                continue;
            }
            rows.push(NormalityRow {
                id: s.id.clone(),
                part: name.to_string(),
                degenerate: s.degenerate,
                insufficient,
                ks: part.as_ref().map(|p| p.ks),
                shape: part.as_ref().map(|p| p.shape),
            });
            if s.degenerate {
                break;
            }
        }
    }
    rows
}

/// `4N / |Im z|²`
pub fn variance_bound_crude(params: &EnsembleParams, z: Complex64) -> f64 {
    4.0 * params.n as f64 / (z.im * z.im)
}

/// `2 |Im z|^{-4} N (s_N² + 2 σ_N^{-2} m_N)`
pub fn variance_bound_delta0(params: &EnsembleParams, z: Complex64) -> f64 {
    2.0 * z.im.abs().powi(-4) * params.n as f64 * (params.s_n2() + 2.0 * params.m_n() / params.sigma_n2())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceBoundRow {
    pub z: Complex64,
    pub variance: RealEstimate,
    pub crude_bound: f64,
    pub delta0_bound: f64,
    pub crude_pass: bool,
    pub delta0_pass: bool,
}

/// Checks `var_hat <= bound (1 + 5 relSE)` for both variance bounds.
pub fn variance_bound_check(report: &EstimatorReport, params: &EnsembleParams) -> Vec<VarianceBoundRow> {
    report
        .z
        .iter()
        .map(|e| {
            let crude = variance_bound_crude(params, e.z);
            let delta0 = variance_bound_delta0(params, e.z);
            let rel = if e.variance.value > 0.0 { e.variance.se / e.variance.value } else { 0.0 };
            let slack = 1.0 + 5.0 * rel;
            VarianceBoundRow {
                z: e.z,
                variance: e.variance,
                crude_bound: crude,
                delta0_bound: delta0,
                crude_pass: e.variance.value <= crude * slack,
                delta0_pass: e.variance.value <= delta0 * slack,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationDrift {
    pub n: usize,
    pub delta: f64,
    /// Mean of `|N(φ) - N̊(φ)|` over paired samples.
    pub mean_abs_drift: RealEstimate,
    /// Largest `max_ij |W̊_ij| / δ` over the samples.
    pub max_entry_ratio: f64,
}

/// Paired comparison of `N(φ)` before and after truncation at `delta`.
pub fn truncation_drift(
    params: &EnsembleParams,
    phi: &TestFunction,
    samples: usize,
    master_seed: u64,
    delta: f64,
    threads: usize,
) -> Result<TruncationDrift> {
    if samples < 2 {
        return Err(Error::Config("drift needs at least 2 samples".into()));
    }
    let sampler = Sampler::new(params.clone())?;
    let n = params.n;
    let one = |index: u64| -> Result<(f64, f64)> {
        let s = sampler.sample(master_seed, index);
        let t = truncate_center_homogenize(&s, params, delta)?;
        let a = spectral::linear_statistic(&Spectrum::of_matrix(&s.matrix)?, phi).value.re;
        let b = spectral::linear_statistic(&Spectrum::of_matrix(&t.matrix)?, phi).value.re;
        let mut worst = 0.0f64;
        for i in 0..n {
            worst = worst.max(t.diag_noise[i].abs());
            for j in i + 1..n {
                worst = worst.max(t.matrix.get(i, j).norm());
            }
        }
        Ok(((a - b).abs(), worst / delta))
    };
    let rows: Vec<Result<(f64, f64)>> = with_pool(threads, || (0..samples as u64).into_par_iter().map(one).collect())?;
    let mut diffs = Vec::with_capacity(samples);
    let mut ratio = 0.0f64;
    for (index, r) in rows.into_iter().enumerate() {
        let (d, q) = r.map_err(|e| Error::Sample {
            index: index as u64,
            source: Box::new(e),
        })?;
        diffs.push(Complex64::new(d, 0.0));
        ratio = ratio.max(q);
    }
    let est = mean_estimate(&diffs);
    Ok(TruncationDrift {
        n,
        delta,
        mean_abs_drift: RealEstimate {
            value: est.value.re,
            se: est.se_re,
        },
        max_entry_ratio: ratio,
    })
}
