//! Cross-checks between independent computations of the same quantity.

use dwlab::ensemble::{Deformation, EnsembleParams, EntryLaw, Sampler};
use dwlab::freeconv::{integrate_against_rho, solve_pastur, AtomicMeasure, QuadratureSpec};
use dwlab::montecarlo::{self, ExperimentPlan};
use dwlab::spectral;
use dwlab::testfn::TestFunction;
use dwlab::theory::{self, FluctuationParams, PoleFitSpec};
use dwlab::Complex64;

#[test]
fn pole_fit_recovers_an_exact_resolvent_pair() {
    let nu = AtomicMeasure::new(vec![(-1.0, 0.5), (1.0, 0.5)]).unwrap();
    let p = FluctuationParams::limit(1.0, 1.5, 0.4, -0.3, nu).unwrap();
    let z = Complex64::new(0.3, 1.0);
    let exact = theory::extend_variance(&p, &TestFunction::real_resolvent_pair(z).unwrap(), &PoleFitSpec::default())
        .unwrap();
    let dx = 0.002;
    let values: Vec<f64> = (0..=4000)
        .map(|k| 2.0 * (z - (-4.0 + dx * k as f64)).inv().re)
        .collect();
    let tabulated = TestFunction::grid("pair", -4.0, dx, values).unwrap();
    let fitted = theory::extend_variance(&p, &tabulated, &PoleFitSpec::default()).unwrap();
    assert!(fitted.fit_residual > 0.0);
    let rel = (fitted.value - exact.value).abs() / exact.value.abs();
    assert!(rel < 1e-2, "fitted {} vs exact {} (rel {rel:.2e})", fitted.value, exact.value);
}

#[test]
fn single_large_sample_follows_the_deterministic_equivalent() {
    let n = 1000;
    let params = EnsembleParams::gue(n, 1.0, Deformation::symmetric_pair(n, 1.0).unwrap()).unwrap();
    let sample = Sampler::new(params.clone()).unwrap().sample(11, 0);
    let spec = spectral::eigenvalues(&sample).unwrap();
    let nu = params.nu_n().unwrap();
    for z in [Complex64::new(0.0, 1.0), Complex64::new(1.5, 0.5), Complex64::new(-2.0, 0.2)] {
        let empirical = spectral::trace_resolvent(&spec, z).unwrap() / n as f64;
        let g = solve_pastur(&nu, 1.0, z).unwrap().g;
        assert!((empirical - g).norm() < 0.02, "z = {z}: {empirical} vs {g}");
    }
}

/// Bias and variance of a smooth bump statistic against their extensions.
#[test]
fn bump_statistic_matches_extended_bias_and_variance() {
    let n = 200;
    let samples = 1000;
    let params = EnsembleParams::with_law(n, EntryLaw::RademacherReal, 1.0, Deformation::symmetric_pair(n, 1.0).unwrap())
        .unwrap();
    let phi = TestFunction::smooth_bump(0.0, 1.5, 3).unwrap();
    let mut plan = ExperimentPlan::new(params.clone(), samples, vec![Complex64::new(0.0, 1.0)], 404);
    plan.test_functions = vec![phi.clone()];
    let report = montecarlo::run(&plan, 0).unwrap();
    let stat = &report.statistics[0];

    let fp = FluctuationParams::finite_n(&params).unwrap();
    let spec = QuadratureSpec {
        abs_tol: 1e-9,
        max_depth: 40,
    };
    let centre = n as f64 * integrate_against_rho(&fp.nu, fp.sigma2, &phi, &spec).unwrap();
    let bias = theory::extend_bias(&fp, &phi, &theory::default_y_schedule(), 1e-8).unwrap();
    let bias_hat = stat.mean.value.re - centre;
    let bias_gap = (bias_hat - bias.value).abs();
    assert!(
        bias_gap <= 4.0 * stat.mean.se_re + bias.error_estimate,
        "bias {bias_hat} vs {} (se {})",
        bias.value,
        stat.mean.se_re
    );

    let var = theory::extend_variance(&fp, &phi, &PoleFitSpec::default()).unwrap();
    let sq: Vec<f64> = stat.centered.iter().map(|c| c.norm_sqr()).collect();
    let mean_sq = sq.iter().sum::<f64>() / samples as f64;
    let se = (sq.iter().map(|v| (v - mean_sq).powi(2)).sum::<f64>() / (samples * (samples - 1)) as f64).sqrt();
    assert!(
        (stat.variance - var.value).abs() <= 4.0 * se,
        "variance {} vs {} (se {se})",
        stat.variance,
        var.value
    );
}
