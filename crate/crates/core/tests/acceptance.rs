//! End-to-end acceptance run. Prints one line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use dwlab::ensemble::{
    choose_delta, Deformation, EnsembleParams, EntryLaw, QuantileSpec, Sampler,
};
use dwlab::freeconv::{semicircle_stieltjes, solve_pastur, AtomicMeasure};
use dwlab::infinitesimal::{
    build_generators, free_moment, infinitesimal_check, monte_carlo_cross_check, xi_exact, GeneratorSpec,
    Generators, PairedWord,
};
use dwlab::montecarlo::{self, EstimatorReport, ExperimentPlan};
use dwlab::spectral;
use dwlab::testfn::TestFunction;
use dwlab::theory::{self, FluctuationParams, PoleFitSpec};
use dwlab::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20_240_611;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn rel(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / b.norm()
}

/// 20 real parts in [-3, 3] times 10 heights in [0.1, 4].
fn upper_grid() -> Vec<Complex64> {
    let mut out = Vec::with_capacity(200);
    for i in 0..20 {
        for k in 0..10 {
            let re = -3.0 + 6.0 * i as f64 / 19.0;
            let im = 0.1 * 40f64.powf(k as f64 / 9.0);
            out.push(c(re, im));
        }
    }
    out
}

fn semicircle_oracle() -> Outcome {
    let start = Instant::now();
    let d0 = AtomicMeasure::dirac(0.0);
    let mut worst = 0.0f64;
    for z in upper_grid() {
        match solve_pastur(&d0, 1.0, z) {
            Ok(s) => worst = worst.max((s.g - semicircle_stieltjes(1.0, z)).norm()),
            Err(e) => return outcome(false, format!("solver failed at {z}: {e}")),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-10 && secs < 1.0, format!("max |G - G_sc| = {worst:.2e}, {secs:.3} s"))
}

fn subordination_identity() -> Outcome {
    let d0 = AtomicMeasure::dirac(0.0);
    let mut worst = 0.0f64;
    for z in upper_grid() {
        match solve_pastur(&d0, 1.0, z) {
            Ok(s) => worst = worst.max((s.omega * s.g - 1.0).norm()),
            Err(e) => return outcome(false, format!("solver failed at {z}: {e}")),
        }
    }
    outcome(worst <= 1e-10, format!("max |omega G - 1| = {worst:.2e}"))
}

struct Draw {
    sigma2: f64,
    s2: f64,
    tau: f64,
    kappa: f64,
    z1: Complex64,
    z2: Complex64,
}

fn random_draw(rng: &mut ChaCha8Rng) -> Draw {
    let sigma2 = rng.random_range(0.5..2.0);
    Draw {
        sigma2,
        s2: rng.random_range(0.0..3.0),
        tau: rng.random_range(-0.9..0.9) * sigma2,
        kappa: rng.random_range(-1.0..1.0) * sigma2 * sigma2,
        z1: c(rng.random_range(-3.0..3.0), rng.random_range(0.2..3.0)),
        z2: c(rng.random_range(-3.0..3.0), rng.random_range(0.2..3.0)),
    }
}

fn dual_path_specialization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut worst_b, mut worst_c) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let d = random_draw(&mut rng);
        let run = || -> dwlab::Result<(f64, f64)> {
            let p = FluctuationParams::limit(d.sigma2, d.s2, d.tau, d.kappa, AtomicMeasure::dirac(0.0))?;
            let b = rel(theory::beta(&p, d.z1)?, theory::bao_xie_b0(d.sigma2, d.s2, d.tau, d.kappa, d.z1)?);
            let g = rel(
                theory::gamma_kernel(&p, d.z1, d.z2)?.gamma,
                theory::bao_xie_c0(d.sigma2, d.s2, d.tau, d.kappa, d.z1, d.z2)?,
            );
            Ok((b, g))
        };
        match run() {
            Ok((b, g)) => {
                worst_b = worst_b.max(b);
                worst_c = worst_c.max(g);
            }
            Err(e) => return outcome(false, format!("evaluation failed: {e}")),
        }
    }
    outcome(
        worst_b <= 1e-9 && worst_c <= 1e-9,
        format!("max rel |beta - b0| = {worst_b:.2e}, max rel |Gamma - C0| = {worst_c:.2e}"),
    )
}

fn kernel_derivative() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let nu = AtomicMeasure::new(vec![(-1.0, 0.3), (0.5, 0.7)]).unwrap();
    let h = 1e-3;
    let mut worst = 0.0f64;
    for k in 0..20 {
        let d = random_draw(&mut rng);
        let nu_k = if k % 2 == 0 { nu.clone() } else { AtomicMeasure::dirac(0.0) };
        let run = || -> dwlab::Result<f64> {
            let p = FluctuationParams::limit(d.sigma2, d.s2, d.tau, d.kappa, nu_k.clone())?;
            let g = |a: f64, b: f64| theory::gamma_primitive(&p, d.z1 + a, d.z2 + b);
            let fd = (g(h, h)? - g(h, -h)? - g(-h, h)? + g(-h, -h)?) / (4.0 * h * h);
            Ok(rel(fd, theory::gamma_kernel(&p, d.z1, d.z2)?.gamma))
        };
        match run() {
            Ok(r) => worst = worst.max(r),
            Err(e) => return outcome(false, format!("evaluation failed: {e}")),
        }
    }
    outcome(worst <= 1e-5, format!("max rel |Gamma - d2 gamma| = {worst:.2e}"))
}

fn grid3() -> Vec<Complex64> {
    vec![c(0.0, 2.0), c(1.0, 1.0), c(-1.0, 0.5)]
}

struct Runs {
    gue: EstimatorReport,
    gue_params: EnsembleParams,
    rad: EstimatorReport,
    rad_params: EnsembleParams,
}

fn big_runs() -> dwlab::Result<Runs> {
    let n = 400;
    let atoms = QuantileSpec::Atoms {
        atoms: vec![(-1.0, 0.5), (1.0, 0.5)],
    };
    let gue_params = EnsembleParams::gue(n, 1.0, Deformation::from_spec(atoms, n)?)?;
    let rad_params = EnsembleParams::with_law(n, EntryLaw::RademacherReal, 1.0, Deformation::zeros(n))?;
    let tr2i = TestFunction::resolvent(c(0.0, 2.0))?;
    let mut gue_plan = ExperimentPlan::new(gue_params.clone(), 2000, grid3(), SEED);
    gue_plan.test_functions = vec![tr2i.clone()];
    let mut rad_plan = ExperimentPlan::new(rad_params.clone(), 2000, grid3(), SEED + 1);
    rad_plan.test_functions = vec![tr2i];
    Ok(Runs {
        gue: montecarlo::run(&gue_plan, 0)?,
        gue_params,
        rad: montecarlo::run(&rad_plan, 0)?,
        rad_params,
    })
}

fn vanishing_bias(r: &Runs) -> Outcome {
    let worst = r
        .gue
        .z
        .iter()
        .map(|e| e.bias_hat.z_score(c(0.0, 0.0)))
        .fold(0.0, f64::max);
    outcome(worst <= 3.0, format!("max |bias_hat| / SE = {worst:.2} over 3 points"))
}

fn nonzero_bias(r: &Runs) -> Outcome {
    let run = || -> dwlab::Result<Vec<montecarlo::BiasComparison>> {
        montecarlo::bias_check(&r.rad, &FluctuationParams::finite_n(&r.rad_params)?)
    };
    match run() {
        Ok(rows) => {
            let worst = rows.iter().map(|b| b.z_score).fold(0.0, f64::max);
            let detail = rows
                .iter()
                .map(|b| format!("z={}: {:.3}+{:.3}i vs beta {:.3}+{:.3}i", b.z, b.bias_hat.value.re, b.bias_hat.value.im, b.beta.re, b.beta.im))
                .collect::<Vec<_>>()
                .join("; ");
            outcome(worst <= 3.0, format!("max |bias_hat - beta| / SE = {worst:.2} ({detail})"))
        }
        Err(e) => outcome(false, format!("evaluation failed: {e}")),
    }
}

fn covariance(r: &Runs) -> Outcome {
    let check = |report: &EstimatorReport, params: &EnsembleParams| -> dwlab::Result<f64> {
        let fp = FluctuationParams::finite_n(params)?;
        let rows = montecarlo::covariance_check(report, &montecarlo::covariance_theory(&fp, &grid3())?)?;
        Ok(rows.iter().map(|c| c.ratio).fold(0.0, f64::max))
    };
    match (check(&r.gue, &r.gue_params), check(&r.rad, &r.rad_params)) {
        (Ok(g), Ok(a)) => outcome(
            g <= 3.0 && a <= 3.0,
            format!("max |cov - Gamma| / SE: GUE {g:.2}, RademacherReal {a:.2} (6 pairs each)"),
        ),
        (Err(e), _) | (_, Err(e)) => outcome(false, format!("evaluation failed: {e}")),
    }
}

fn clt(r: &Runs) -> Outcome {
    let mut worst = 1.0f64;
    let mut parts = Vec::new();
    for (name, report) in [("GUE", &r.gue), ("RademacherReal", &r.rad)] {
        for row in montecarlo::normality_check(report) {
            match row.ks {
                Some(ks) if !row.insufficient && !row.degenerate => {
                    worst = worst.min(ks.p_value);
                    parts.push(format!("{name} {} p={:.3}", row.part, ks.p_value));
                }
                _ => return outcome(false, format!("{name} {}: no KS result", row.part)),
            }
        }
    }
    outcome(parts.len() == 4 && worst > 0.01, parts.join(", "))
}

fn variance_bounds(r: &Runs) -> Outcome {
    let mut ok = true;
    let mut worst = 0.0f64;
    for (report, params) in [(&r.gue, &r.gue_params), (&r.rad, &r.rad_params)] {
        for row in montecarlo::variance_bound_check(report, params) {
            ok &= row.crude_pass && row.delta0_pass;
            worst = worst.max(row.variance.value / row.crude_bound.min(row.delta0_bound));
        }
    }
    outcome(ok, format!("max Var / min(bound) = {worst:.3e}"))
}

fn identity_suite() -> Outcome {
    let start = Instant::now();
    let grid = grid3();
    let n = 60;
    let params = [
        EnsembleParams::gue(n, 1.0, Deformation::symmetric_pair(n, 1.0).unwrap()).unwrap(),
        EnsembleParams::with_law(n, EntryLaw::RademacherReal, 1.0, Deformation::zeros(n)).unwrap(),
    ];
    let mut failures = 0usize;
    let mut checked = 0usize;
    for p in &params {
        let s = Sampler::new(p.clone()).unwrap();
        for idx in 0..50u64 {
            let a = s.sample(SEED, idx);
            let b = s.sample(SEED, idx + 50);
            let spec = spectral::eigenvalues(&a).unwrap();
            for (i, &z) in grid.iter().enumerate() {
                let z2 = grid[(i + 1) % grid.len()];
                let schur = spectral::verify_schur(&a.matrix, (idx as usize) % n, z).unwrap();
                let norm = spectral::resolvent_norm(&spec, z).unwrap();
                let ri = spectral::verify_resolvent_identity(&a.matrix, &b.matrix, z, z2).unwrap();
                let ok = schur.passes(z)
                    && norm <= z.im.recip() * (1.0 + 1e-12)
                    && ri <= spectral::resolvent_identity_tolerance(z, z2);
                checked += 1;
                failures += usize::from(!ok);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failures == 0,
        format!("{failures} failures in {checked} checks on 100 samples, {secs:.1} s"),
    )
}

fn infinitesimal_suite() -> Outcome {
    let run = || -> dwlab::Result<(bool, String)> {
        let mut ok = true;
        let mut notes = Vec::new();
        let id = |n: usize| Ok(Generators::identity(n));
        let dims = [8, 16, 32, 64];

        let w2 = infinitesimal_check(&PairedWord::power(2)?, &dims, 1.0, &id)?;
        ok &= w2.identically_zero;
        notes.push(format!("W^2 zero={}", w2.identically_zero));

        let w4 = infinitesimal_check(&PairedWord::power(4)?, &dims, 1.0, &id)?;
        let w4_err = w4
            .results
            .iter()
            .map(|r| (r.correction.re - (r.n as f64).powi(-2)).abs() / (r.n as f64).powi(-2))
            .fold(0.0, f64::max);
        ok &= w4_err <= 1e-12;
        notes.push(format!("W^4 rel err {w4_err:.1e}"));

        let two = PairedWord::parse("w1 w2 w1 w2")?;
        let mut two_err = 0.0f64;
        for &n in &dims {
            let xi = xi_exact(&two, 1.0 / n as f64, &Generators::identity(n))?;
            two_err = two_err.max((xi.re - (n as f64).powi(-2)).abs() * (n * n) as f64);
            ok &= free_moment(&two, 1.0, &Generators::identity(n))?.norm() == 0.0;
        }
        ok &= two_err <= 1e-12;
        notes.push(format!("W1W2W1W2 rel err {two_err:.1e}"));

        let specs = [
            ("a".to_string(), GeneratorSpec::AlternatingSign),
            ("b".to_string(), GeneratorSpec::UniformDiagonal { lo: 0.0, hi: 2.0 }),
        ]
        .into_iter()
        .collect();
        let gens = |n: usize| build_generators(&specs, n);
        let mixed = [
            "w a w a w a w a",
            "w a w b w a w b",
            "w1 a w2 a w1 a w2 a",
            "w b w b w w",
            "w a^2 w b w a w b w w",
        ];
        let mut slopes = Vec::new();
        for text in mixed {
            let r = infinitesimal_check(&PairedWord::parse(text)?, &dims, 1.0, &gens)?;
            ok &= r.passes;
            slopes.push(match r.slope {
                Some(s) => format!("{s:.3}"),
                None => "zero".into(),
            });
        }
        notes.push(format!("slopes [{}]", slopes.join(", ")));

        let mut zs = Vec::new();
        for text in ["w^2", "w^4", "w1 w2 w1 w2"] {
            let cc = monte_carlo_cross_check(&PairedWord::parse(text)?, 1.0, &Generators::identity(50), 5000, SEED, 0)?;
            ok &= cc.passes;
            zs.push(format!("{:.2}", cc.z_score));
        }
        notes.push(format!("MC z [{}]", zs.join(", ")));
        Ok((ok, notes.join("; ")))
    };
    match run() {
        Ok((ok, detail)) => outcome(ok, detail),
        Err(e) => outcome(false, format!("evaluation failed: {e}")),
    }
}

fn truncation() -> Outcome {
    let run = || -> dwlab::Result<(bool, String)> {
        let phi = TestFunction::arctan();
        let mut drifts = Vec::new();
        let mut ratio = 0.0f64;
        for n in [200, 400, 800] {
            let p = EnsembleParams::with_law(n, EntryLaw::GaussianReal, 1.0, Deformation::zeros(n))?;
            let delta = choose_delta(n)?;
            let d = montecarlo::truncation_drift(&p, &phi, 100, SEED, delta, 0)?;
            ratio = ratio.max(d.max_entry_ratio);
            drifts.push(d.mean_abs_drift.value);
        }
        let decreasing = drifts.windows(2).all(|w| w[1] < w[0]);
        Ok((
            ratio <= 2.0 && decreasing,
            format!("max |entry| / delta = {ratio:.3}; drift {:.3} -> {:.3} -> {:.3}", drifts[0], drifts[1], drifts[2]),
        ))
    };
    match run() {
        Ok((ok, detail)) => outcome(ok, detail),
        Err(e) => outcome(false, format!("evaluation failed: {e}")),
    }
}

fn extension_consistency() -> Outcome {
    let run = || -> dwlab::Result<(bool, String)> {
        let nu = AtomicMeasure::new(vec![(-1.0, 0.5), (1.0, 0.5)])?;
        let p = FluctuationParams::limit(1.0, 1.5, 0.4, -0.3, nu)?;
        let z = c(0.3, 1.0);
        let phi = TestFunction::real_resolvent_pair(z)?;
        let ext = theory::extend_bias(&p, &phi, &theory::default_y_schedule(), 1e-10)?;
        let exact = 2.0 * theory::beta(&p, z)?.re;
        let bias_err = (ext.value - exact).abs();
        let bias_ok = bias_err <= 1e-4 + ext.error_estimate;

        let v = theory::extend_variance(&p, &phi, &PoleFitSpec::default())?;
        let g = |a: Complex64, b: Complex64| theory::gamma_kernel(&p, a, b).map(|k| k.gamma);
        let bilinear = (g(z, z)? + 2.0 * g(z, z.conj())? + g(z.conj(), z.conj())?).re;
        let var_err = (v.value - bilinear).abs() / bilinear.abs();
        Ok((
            bias_ok && var_err <= 1e-12,
            format!(
                "bias |ext - span| = {bias_err:.2e} (extrapolation error {:.2e}); variance rel err {var_err:.1e}",
                ext.error_estimate
            ),
        ))
    };
    match run() {
        Ok((ok, detail)) => outcome(ok, detail),
        Err(e) => outcome(false, format!("evaluation failed: {e}")),
    }
}

fn reproducibility() -> Outcome {
    let run = || -> dwlab::Result<bool> {
        let n = 100;
        let p = EnsembleParams::with_law(n, EntryLaw::RademacherReal, 1.0, Deformation::symmetric_pair(n, 0.5)?)?;
        let mut plan = ExperimentPlan::new(p, 200, grid3(), SEED);
        plan.test_functions = vec![TestFunction::arctan(), TestFunction::smooth_bump(0.0, 1.5, 3)?];
        let a = montecarlo::run(&plan, 1)?.to_json()?;
        let b = montecarlo::run(&plan, 8)?.to_json()?;
        Ok(a == b)
    };
    match run() {
        Ok(same) => outcome(same, format!("thread counts 1 and 8: reports {}", if same { "identical" } else { "differ" })),
        Err(e) => outcome(false, format!("evaluation failed: {e}")),
    }
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Outcome, f64)> = Vec::new();
    let mut record = |name: &'static str, f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let secs = start.elapsed().as_secs_f64();
        println!("[{}] {name}: {} ({secs:.1} s)", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o, secs));
    };
    record("1 semicircle oracle", &semicircle_oracle);
    record("2 subordination identity", &subordination_identity);
    record("3 dual-path specialization", &dual_path_specialization);
    record("4 kernel derivative", &kernel_derivative);
    let start = Instant::now();
    let runs = big_runs();
    println!("(Monte Carlo runs at N = 400, M = 2000: {:.1} s)", start.elapsed().as_secs_f64());
    match &runs {
        Ok(r) => {
            record("5 vanishing bias", &|| vanishing_bias(r));
            record("6 nonzero bias", &|| nonzero_bias(r));
            record("7 covariance", &|| covariance(r));
            record("8 CLT", &|| clt(r));
            record("9 variance bounds", &|| variance_bounds(r));
        }
        Err(e) => {
            for name in ["5 vanishing bias", "6 nonzero bias", "7 covariance", "8 CLT", "9 variance bounds"] {
                let msg = format!("Monte Carlo run failed: {e}");
                record(name, &|| outcome(false, msg.clone()));
            }
        }
    }
    record("10 identity suite", &identity_suite);
    record("11 infinitesimal suite", &infinitesimal_suite);
    record("12 truncation", &truncation);
    record("13 extension consistency", &extension_consistency);
    record("14 reproducibility", &reproducibility);
    let failed: Vec<&str> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    println!("acceptance: {} of {} criteria pass", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failing: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
