use std::io::Write;

use dwlab::ensemble::{Sampler, WignerSample};
use dwlab::freeconv::{self, AtomicMeasure, QuadratureSpec};
use dwlab::infinitesimal::{self, build_generators, Generators, PairedWord};
use dwlab::montecarlo::{self, EstimatorReport, ExperimentPlan, Truncation};
use dwlab::spectral;
use dwlab::testfn::TestFunction;
use dwlab::theory::{self, Extrapolated, FluctuationParams, PoleFitSpec};
use dwlab::{Complex64, Error};
use serde::Serialize;

use crate::config::{GeneratorConfig, LoadedConfig, TheoryMode};
use crate::output::{write_header, Output, Stamped};

/// Result of a command that ran to completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Violation(Vec<String>),
}

impl Outcome {
    fn from_failures(failures: Vec<String>) -> Self {
        if failures.is_empty() {
            Self::Pass
        } else {
            Self::Violation(failures)
        }
    }
}

pub struct Context<'a> {
    pub config: &'a LoadedConfig,
    pub out: &'a Output,
    pub seed: Option<u64>,
    pub threads: usize,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

fn fluctuation(cfg: &LoadedConfig) -> Result<FluctuationParams, Error> {
    let p = cfg.ensemble()?;
    match cfg.config.theory.mode {
        TheoryMode::FiniteN => FluctuationParams::finite_n(p),
        TheoryMode::Limit => FluctuationParams::limit_of(p),
    }
}

fn parse_test_functions(ids: &[String]) -> Result<Vec<TestFunction>, Error> {
    ids.iter()
        .map(|id| TestFunction::parse(id).map_err(|e| Error::Config(format!("test function {id:?}: {e}"))))
        .collect()
}

fn is_delta0(nu: &AtomicMeasure) -> bool {
    nu.atoms() == [(0.0, 1.0)]
}

fn relative(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

#[derive(Debug, Serialize)]
struct TheoryRow {
    z: Complex64,
    beta: Complex64,
    beta_tilde: Complex64,
    bias_bound: Option<f64>,
    /// `|β - b₀| / |b₀|` when `ν = δ₀`.
    bao_xie_residual: Option<f64>,
}

#[derive(Debug, Serialize)]
struct KernelRow {
    z1: Complex64,
    z2: Complex64,
    gamma: Option<Complex64>,
    gamma_conjugated: Option<Complex64>,
    branch_margin: Option<f64>,
    bao_xie_residual: Option<f64>,
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct ExtensionRow {
    id: String,
    bias: Option<Extrapolated>,
    variance: Option<f64>,
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct TheoryTables {
    fluctuation: FluctuationParams,
    rows: Vec<TheoryRow>,
    kernel: Vec<KernelRow>,
    extensions: Vec<ExtensionRow>,
}

pub fn theory(ctx: &Context) -> Result<Outcome, Error> {
    let cfg = ctx.config;
    let grid = cfg.grid()?;
    let fp = fluctuation(cfg)?;
    let test_functions = parse_test_functions(&cfg.config.theory.test_functions)?;
    let delta0 = is_delta0(&fp.nu);
    let mut rows = Vec::with_capacity(grid.len());
    for &z in &grid {
        let beta = theory::beta(&fp, z)?;
        let bao_xie_residual = if delta0 {
            Some(relative(beta, theory::bao_xie_b0(fp.sigma2, fp.s2, fp.tau, fp.kappa, z)?))
        } else {
            None
        };
        rows.push(TheoryRow {
            z,
            beta,
            beta_tilde: theory::beta_tilde(&fp, z)?,
            bias_bound: fp.dimension().map(|_| theory::bias_bound(&fp, z)).transpose()?,
            bao_xie_residual,
        });
    }
    let mut kernel = Vec::new();
    for i in 0..grid.len() {
        for j in i..grid.len() {
            let (z1, z2) = (grid[i], grid[j]);
            let row = match (theory::gamma_kernel(&fp, z1, z2), theory::gamma_kernel(&fp, z1, z2.conj())) {
                (Ok(k), Ok(kc)) => {
                    let bao_xie_residual = if delta0 {
                        theory::bao_xie_c0(fp.sigma2, fp.s2, fp.tau, fp.kappa, z1, z2)
                            .ok()
                            .map(|c| relative(k.gamma, c))
                    } else {
                        None
                    };
                    KernelRow {
                        z1,
                        z2,
                        gamma: Some(k.gamma),
                        gamma_conjugated: Some(kc.gamma),
                        branch_margin: Some(k.branch_margin.min(kc.branch_margin)),
                        bao_xie_residual,
                        error: None,
                    }
                }
                (Err(e), _) | (_, Err(e)) => KernelRow {
                    z1,
                    z2,
                    gamma: None,
                    gamma_conjugated: None,
                    branch_margin: None,
                    bao_xie_residual: None,
                    error: Some(e.to_string()),
                },
            };
            kernel.push(row);
        }
    }
    let extensions: Vec<ExtensionRow> = test_functions
        .iter()
        .map(|phi| {
            let bias = theory::extend_bias(&fp, phi, &theory::default_y_schedule(), 1e-8);
            let variance = theory::extend_variance(&fp, phi, &PoleFitSpec::default());
            let error = [bias.as_ref().err(), variance.as_ref().err()]
                .into_iter()
                .flatten()
                .map(ToString::to_string)
                .collect::<Vec<_>>();
            ExtensionRow {
                id: phi.id().to_string(),
                bias: bias.ok(),
                variance: variance.ok().map(|v| v.value),
                error: (!error.is_empty()).then(|| error.join("; ")),
            }
        })
        .collect();

    let out = ctx.out;
    out.csv("theory.csv", |w| {
        write_header(
            w,
            &out.header_with(&["beta: limiting bias of Tr R(z); beta_tilde: bias of the subordination map", "bias_bound: explicit finite-N bound on |E Tr R - N G_rho_N|"]),
        )?;
        writeln!(w, "re_z,im_z,beta_re,beta_im,beta_tilde_re,beta_tilde_im,bias_bound,bao_xie_residual")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{:e},{:e},{:e},{:e},{},{}",
                r.z.re,
                r.z.im,
                r.beta.re,
                r.beta.im,
                r.beta_tilde.re,
                r.beta_tilde.im,
                opt(r.bias_bound),
                opt(r.bao_xie_residual)
            )?;
        }
        Ok(())
    })?;
    out.csv("kernel.csv", |w| {
        write_header(w, &out.header_with(&["gamma: Cov(Tr R(z1), Tr R(z2)) limit; gamma_conj: same at conj(z2)"]))?;
        writeln!(
            w,
            "re_z1,im_z1,re_z2,im_z2,gamma_re,gamma_im,gamma_conj_re,gamma_conj_im,branch_margin,bao_xie_residual,error"
        )?;
        for k in &kernel {
            let (g, gc) = (k.gamma.unwrap_or(Complex64::new(f64::NAN, f64::NAN)), k.gamma_conjugated.unwrap_or(Complex64::new(f64::NAN, f64::NAN)));
            writeln!(
                w,
                "{},{},{},{},{:e},{:e},{:e},{:e},{},{},{}",
                k.z1.re,
                k.z1.im,
                k.z2.re,
                k.z2.im,
                g.re,
                g.im,
                gc.re,
                gc.im,
                opt(k.branch_margin),
                opt(k.bao_xie_residual),
                k.error.as_deref().unwrap_or("").replace(',', ";")
            )?;
        }
        Ok(())
    })?;
    if !extensions.is_empty() {
        out.csv("extensions.csv", |w| {
            write_header(w, &out.header_with(&["bias: limiting bias of N(phi); variance: limiting variance of N(phi)"]))?;
            writeln!(w, "id,bias,bias_error_estimate,variance,error")?;
            for e in &extensions {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    e.id,
                    opt(e.bias.as_ref().map(|b| b.value)),
                    opt(e.bias.as_ref().map(|b| b.error_estimate)),
                    opt(e.variance),
                    e.error.as_deref().unwrap_or("").replace(',', ";")
                )?;
            }
            Ok(())
        })?;
    }
    out.json(
        "theory.json",
        &TheoryTables {
            fluctuation: fp,
            rows,
            kernel,
            extensions,
        },
    )?;
    Ok(Outcome::Pass)
}

pub fn simulate(ctx: &Context) -> Result<Outcome, Error> {
    let cfg = ctx.config;
    let sim = cfg.section(&cfg.config.simulate, "simulate")?;
    let params = cfg.ensemble()?.clone();
    let plan = ExperimentPlan {
        params,
        samples: sim.samples,
        z_grid: cfg.grid()?,
        test_functions: parse_test_functions(&sim.test_functions)?,
        master_seed: cfg.seed(ctx.seed)?,
        truncation: sim.truncate.then_some(Truncation { delta: sim.delta }),
        im_floor: sim.im_floor,
    };
    let report = montecarlo::run(&plan, ctx.threads)?;
    let fp = fluctuation(cfg)?;
    ctx.out.json_always("report.json", &report)?;
    ctx.out.csv("per_z.csv", |w| report.write_per_z_csv(w, ctx.out.header(), &fp))?;
    Ok(Outcome::Pass)
}

#[derive(Debug, Serialize)]
struct Comparison {
    bias: Vec<montecarlo::BiasComparison>,
    covariance: Vec<montecarlo::CovarianceComparison>,
    normality: Vec<montecarlo::NormalityRow>,
    variance_bounds: Vec<montecarlo::VarianceBoundRow>,
    failures: Vec<String>,
}

pub fn compare(ctx: &Context) -> Result<Outcome, Error> {
    let cfg = ctx.config;
    let cmp = cfg.section(&cfg.config.compare, "compare")?;
    let path = cfg.resolve(&cmp.report);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read report {}: {e}", path.display())))?;
    let report: EstimatorReport = serde_json::from_str::<Stamped<EstimatorReport>>(&text)
        .map(|s| s.data)
        .or_else(|_| EstimatorReport::from_json(&text))
        .map_err(|e| Error::Config(format!("report {}: {e}", path.display())))?;
    let params = cfg.ensemble()?;
    if &report.params != params {
        return Err(Error::Config("report was produced with different ensemble parameters".into()));
    }
    let grid = cfg.grid()?;
    let report_grid: Vec<Complex64> = report.z.iter().map(|e| e.z).collect();
    if report_grid != grid {
        return Err(Error::Config(format!(
            "report grid {report_grid:?} does not match the configured grid {grid:?}"
        )));
    }
    let fp = fluctuation(cfg)?;
    let bias = montecarlo::bias_check(&report, &fp)?;
    let covariance = montecarlo::covariance_check(&report, &montecarlo::covariance_theory(&fp, &grid)?)?;
    let normality = montecarlo::normality_check(&report);
    let variance_bounds = montecarlo::variance_bound_check(&report, params);

    let mut failures = Vec::new();
    if let Some(max) = cmp.bias_z_max {
        for b in bias.iter().filter(|b| !(b.z_score <= max)) {
            failures.push(format!("bias at z = {}: {:.2} SE from beta", b.z, b.z_score));
        }
    }
    if let Some(max) = cmp.covariance_z_max {
        for c in covariance.iter().filter(|c| !(c.ratio <= max)) {
            failures.push(format!("covariance at ({}, {}): {:.2} SE from gamma", c.z1, c.z2, c.ratio));
        }
    }
    if let Some(min) = cmp.ks_p_min {
        for row in normality.iter().filter(|r| !r.degenerate && !r.insufficient) {
            if let Some(ks) = row.ks.filter(|ks| !(ks.p_value > min)) {
                failures.push(format!("KS p-value {:.3e} for {} ({})", ks.p_value, row.id, row.part));
            }
        }
    }
    if cmp.check_variance_bounds {
        for v in variance_bounds.iter().filter(|v| !(v.crude_pass && v.delta0_pass)) {
            failures.push(format!("variance bound exceeded at z = {}", v.z));
        }
    }

    let out = ctx.out;
    out.csv("compare_bias.csv", |w| {
        write_header(w, &out.header_with(&["z_score: |bias_hat - beta| / SE"]))?;
        writeln!(w, "re_z,im_z,bias_hat_re,bias_hat_im,se,beta_re,beta_im,z_score,bound")?;
        for b in &bias {
            writeln!(
                w,
                "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                b.z.re,
                b.z.im,
                b.bias_hat.value.re,
                b.bias_hat.value.im,
                b.bias_hat.se(),
                b.beta.re,
                b.beta.im,
                b.z_score,
                b.bound
            )?;
        }
        Ok(())
    })?;
    out.csv("compare_covariance.csv", |w| {
        write_header(w, &out.header_with(&["ratio: |empirical - gamma| / SE, non-conjugated and conjugated"]))?;
        writeln!(w, "re_z1,im_z1,re_z2,im_z2,cov_re,cov_im,gamma_re,gamma_im,ratio,cov_conj_re,cov_conj_im,gamma_conj_re,gamma_conj_im,ratio_conj")?;
        for c in &covariance {
            writeln!(
                w,
                "{},{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                c.z1.re,
                c.z1.im,
                c.z2.re,
                c.z2.im,
                c.empirical.value.re,
                c.empirical.value.im,
                c.gamma.re,
                c.gamma.im,
                c.ratio,
                c.empirical_conjugated.value.re,
                c.empirical_conjugated.value.im,
                c.gamma_conjugated.re,
                c.gamma_conjugated.im,
                c.ratio_conjugated
            )?;
        }
        Ok(())
    })?;
    out.csv("compare_normality.csv", |w| {
        write_header(w, out.header())?;
        writeln!(w, "id,part,degenerate,insufficient,ks_statistic,ks_p_value,skewness,excess_kurtosis")?;
        for r in &normality {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.id.replace(',', ";"),
                r.part,
                r.degenerate,
                r.insufficient,
                opt(r.ks.map(|k| k.statistic)),
                opt(r.ks.map(|k| k.p_value)),
                opt(r.shape.map(|s| s.skewness.value)),
                opt(r.shape.map(|s| s.excess_kurtosis.value))
            )?;
        }
        Ok(())
    })?;
    out.csv("compare_variance.csv", |w| {
        write_header(w, &out.header_with(&["bounds: 4N/Im(z)^2 and the delta = 0 fourth-moment form"]))?;
        writeln!(w, "re_z,im_z,variance,se,crude_bound,delta0_bound,crude_pass,delta0_pass")?;
        for v in &variance_bounds {
            writeln!(
                w,
                "{},{},{:e},{:e},{:e},{:e},{},{}",
                v.z.re,
                v.z.im,
                v.variance.value,
                v.variance.se,
                v.crude_bound,
                v.delta0_bound,
                v.crude_pass,
                v.delta0_pass
            )?;
        }
        Ok(())
    })?;
    out.json(
        "compare.json",
        &Comparison {
            bias,
            covariance,
            normality,
            variance_bounds,
            failures: failures.clone(),
        },
    )?;
    Ok(Outcome::from_failures(failures))
}

#[derive(Debug, Serialize)]
struct DensityTables {
    density: Vec<freeconv::DensityEstimate>,
    integrals: Vec<IntegralRow>,
}

#[derive(Debug, Serialize)]
struct IntegralRow {
    id: String,
    integral: f64,
    /// `N ∫φ dρ_N` in finite-`N` mode.
    scaled: Option<f64>,
}

pub fn density(ctx: &Context) -> Result<Outcome, Error> {
    let cfg = ctx.config;
    let d = cfg.section(&cfg.config.density, "density")?;
    if d.points < 2 || !(d.x_min < d.x_max) {
        return Err(Error::Config("density needs x_min < x_max and at least 2 points".into()));
    }
    let fp = fluctuation(cfg)?;
    let schedule = freeconv::default_eta_schedule();
    let xs: Vec<f64> = (0..d.points)
        .map(|k| d.x_min + (d.x_max - d.x_min) * k as f64 / (d.points - 1) as f64)
        .collect();
    let density: Vec<freeconv::DensityEstimate> = xs
        .iter()
        .map(|&x| freeconv::density(&fp.nu, fp.sigma2, x, &schedule))
        .collect::<Result<_, _>>()?;
    let integrals: Vec<IntegralRow> = parse_test_functions(&d.test_functions)?
        .iter()
        .map(|phi| {
            let integral = freeconv::integrate_against_rho(&fp.nu, fp.sigma2, phi, &QuadratureSpec::default())?;
            Ok(IntegralRow {
                id: phi.id().to_string(),
                integral,
                scaled: fp.dimension().map(|n| n as f64 * integral),
            })
        })
        .collect::<Result<_, Error>>()?;
    let out = ctx.out;
    out.csv("density.csv", |w| freeconv::write_density_csv(w, out.header(), &density))?;
    if !integrals.is_empty() {
        out.csv("integrals.csv", |w| {
            write_header(w, out.header())?;
            writeln!(w, "id,integral,scaled")?;
            for r in &integrals {
                writeln!(w, "{},{:e},{}", r.id.replace(',', ";"), r.integral, opt(r.scaled))?;
            }
            Ok(())
        })?;
    }
    out.json("density.json", &DensityTables { density, integrals })?;
    Ok(Outcome::Pass)
}

#[derive(Debug, Serialize)]
struct WordSummary {
    report: infinitesimal::InfinitesimalReport,
    limit_free_moment: Option<Complex64>,
    cross_check: Option<infinitesimal::CrossCheck>,
}

fn read_matrix_file(path: &std::path::Path) -> Result<Vec<Vec<f64>>, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read matrix file {}: {e}", path.display())))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Config(format!("{}: {v:?}: {e}", path.display())))
                })
                .collect()
        })
        .collect()
}

pub fn infinitesimal(ctx: &Context) -> Result<Outcome, Error> {
    let cfg = ctx.config;
    let inf = cfg.section(&cfg.config.infinitesimal, "infinitesimal")?;
    let words: Vec<PairedWord> = inf
        .words
        .iter()
        .map(|w| PairedWord::parse(w).map_err(|e| Error::Config(format!("word {w:?}: {e}"))))
        .collect::<Result<_, _>>()?;
    let mut specs = std::collections::BTreeMap::new();
    let mut files = Vec::new();
    for (name, g) in &inf.generators {
        match (g.spec(), g) {
            (Some(spec), _) => {
                specs.insert(name.clone(), spec);
            }
            (None, GeneratorConfig::MatrixFile { path }) => {
                files.push((name.clone(), read_matrix_file(&cfg.resolve(path))?));
            }
            (None, _) => unreachable!("only matrix files lack a spec"),
        }
    }
    let build = |n: usize| -> Result<Generators, Error> {
        let mut g = build_generators(&specs, n).map_err(|e| Error::Config(e.to_string()))?;
        for (name, rows) in &files {
            g.insert_real_rows(name, rows).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(g)
    };
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for word in &words {
        let report = infinitesimal::infinitesimal_check(word, &inf.dims, inf.n_sigma2, &build)?;
        if !report.passes {
            failures.push(format!("correction for {word} decays with slope {:?}", report.slope));
        }
        let limit_free_moment = inf
            .moments
            .as_ref()
            .map(|t| infinitesimal::free_moment(word, inf.n_sigma2, t))
            .transpose()?;
        let cross_check = match &inf.cross_check {
            Some(cc) => {
                let seed = cfg.seed(ctx.seed)?;
                let c = infinitesimal::monte_carlo_cross_check(word, cc.sigma2, &build(cc.n)?, cc.samples, seed, ctx.threads)?;
                if !c.passes {
                    failures.push(format!("Monte Carlo mean for {word} is {:.2} SE from the exact value", c.z_score));
                }
                Some(c)
            }
            None => None,
        };
        summaries.push(WordSummary {
            report,
            limit_free_moment,
            cross_check,
        });
    }
    let out = ctx.out;
    out.csv("moments.csv", |w| {
        write_header(w, &out.header_with(&["xi: exact E[tr(word)]; free: non-crossing part; correction = xi - free"]))?;
        writeln!(w, "word,n,xi_re,xi_im,free_re,free_im,correction_re,correction_im,genus0_re,genus1_re")?;
        for s in &summaries {
            for r in &s.report.results {
                let g1 = r.genus_terms.get(1).map(|g| g.re);
                writeln!(
                    w,
                    "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
                    s.report.word,
                    r.n,
                    r.xi.re,
                    r.xi.im,
                    r.free_moment.re,
                    r.free_moment.im,
                    r.correction.re,
                    r.correction.im,
                    r.genus_terms[0].re,
                    opt(g1)
                )?;
            }
        }
        Ok(())
    })?;
    out.csv("infinitesimal_summary.csv", |w| {
        write_header(w, out.header())?;
        writeln!(w, "word,slope,identically_zero,passes,limit_free_re,cross_check_z,cross_check_pass")?;
        for s in &summaries {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                s.report.word,
                opt(s.report.slope),
                s.report.identically_zero,
                s.report.passes,
                opt(s.limit_free_moment.map(|m| m.re)),
                opt(s.cross_check.as_ref().map(|c| c.z_score)),
                s.cross_check.as_ref().map_or(String::new(), |c| c.passes.to_string())
            )?;
        }
        Ok(())
    })?;
    out.json("infinitesimal.json", &summaries)?;
    Ok(Outcome::from_failures(failures))
}

#[derive(Debug, Serialize)]
struct IdentityRow {
    sample: u64,
    z: Complex64,
    diagonal_residual: f64,
    trace_residual: f64,
    minor_trace_gap: f64,
    schur_tolerance: f64,
    resolvent_norm: f64,
    resolvent_identity_residual: f64,
    resolvent_identity_tolerance: f64,
    passes: bool,
}

fn identity_rows(sample: &WignerSample, next: &WignerSample, grid: &[Complex64], minor: usize) -> Result<Vec<IdentityRow>, Error> {
    let spec = spectral::eigenvalues(sample)?;
    let mut rows = Vec::with_capacity(grid.len());
    for (i, &z) in grid.iter().enumerate() {
        let schur = spectral::verify_schur(&sample.matrix, minor, z)?;
        let norm = spectral::resolvent_norm(&spec, z)?;
        let z2 = grid[(i + 1) % grid.len()];
        let residual = spectral::verify_resolvent_identity(&sample.matrix, &next.matrix, z, z2)?;
        let tol = spectral::resolvent_identity_tolerance(z, z2);
        rows.push(IdentityRow {
            sample: sample.seed_path.index,
            z,
            diagonal_residual: schur.diagonal_residual,
            trace_residual: schur.trace_residual,
            minor_trace_gap: schur.minor_trace_gap,
            schur_tolerance: schur.tolerance,
            resolvent_norm: norm,
            resolvent_identity_residual: residual,
            resolvent_identity_tolerance: tol,
            passes: schur.passes(z) && norm <= z.im.abs().recip() * (1.0 + 1e-12) && residual <= tol,
        });
    }
    Ok(rows)
}

pub fn identities(ctx: &Context) -> Result<Outcome, Error> {
    let cfg = ctx.config;
    let id = cfg.config.identities.clone().unwrap_or(crate::config::IdentitiesConfig {
        samples: 10,
        minor: 0,
    });
    let params = cfg.ensemble()?;
    if id.minor >= params.n {
        return Err(Error::Config(format!("minor index {} out of range for N = {}", id.minor, params.n)));
    }
    let grid = cfg.grid()?;
    let seed = cfg.seed(ctx.seed)?;
    let sampler = Sampler::new(params.clone())?;
    let mut rows = Vec::new();
    for s in 0..id.samples as u64 {
        let a = sampler.sample(seed, s);
        let b = sampler.sample(seed, s + id.samples as u64);
        rows.extend(identity_rows(&a, &b, &grid, id.minor)?);
    }
    let failures: Vec<String> = rows
        .iter()
        .filter(|r| !r.passes)
        .map(|r| format!("identity residual above tolerance for sample {} at z = {}", r.sample, r.z))
        .collect();
    let out = ctx.out;
    out.csv("identities.csv", |w| {
        write_header(w, &out.header_with(&["minor_trace_gap is bounded by 1/Im(z); resolvent_norm by 1/Im(z)"]))?;
        writeln!(w, "sample,re_z,im_z,diagonal_residual,trace_residual,minor_trace_gap,schur_tolerance,resolvent_norm,resolvent_identity_residual,resolvent_identity_tolerance,passes")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
                r.sample,
                r.z.re,
                r.z.im,
                r.diagonal_residual,
                r.trace_residual,
                r.minor_trace_gap,
                r.schur_tolerance,
                r.resolvent_norm,
                r.resolvent_identity_residual,
                r.resolvent_identity_tolerance,
                r.passes
            )?;
        }
        Ok(())
    })?;
    out.json("identities.json", &rows)?;
    Ok(Outcome::from_failures(failures))
}
