//! Deterministic reductions and the sample statistics used by the Monte
//! Carlo harness.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Pairwise sum in a fixed order, independent of how the values were
/// produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 16 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub fn pairwise_sum_complex(values: &[Complex64]) -> Complex64 {
    if values.len() <= 16 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum_complex(&values[..mid]) + pairwise_sum_complex(&values[mid..])
}

pub fn mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

pub fn mean_complex(values: &[Complex64]) -> Complex64 {
    pairwise_sum_complex(values) / values.len() as f64
}

/// Estimate with separate standard errors for its real and imaginary parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexEstimate {
    pub value: Complex64,
    pub se_re: f64,
    pub se_im: f64,
}

impl ComplexEstimate {
    /// `sqrt(se_re² + se_im²)`
    pub fn se(&self) -> f64 {
        self.se_re.hypot(self.se_im)
    }

    /// `|value - target| / se`
    pub fn z_score(&self, target: Complex64) -> f64 {
        (self.value - target).norm() / self.se()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealEstimate {
    pub value: f64,
    pub se: f64,
}

/// Jackknife standard error from leave-one-out values.
pub fn jackknife_se(leave_one_out: &[f64]) -> f64 {
    let m = leave_one_out.len() as f64;
    let avg = mean(leave_one_out);
    let dev: Vec<f64> = leave_one_out.iter().map(|v| (v - avg) * (v - avg)).collect();
    ((m - 1.0) / m * pairwise_sum(&dev)).sqrt()
}

/// Sample mean with its standard error (the jackknife SE of a mean is the
/// usual `sd/√M`).
pub fn mean_estimate(values: &[Complex64]) -> ComplexEstimate {
    let m = values.len() as f64;
    let mu = mean_complex(values);
    let re: Vec<f64> = values.iter().map(|v| (v.re - mu.re).powi(2)).collect();
    let im: Vec<f64> = values.iter().map(|v| (v.im - mu.im).powi(2)).collect();
    ComplexEstimate {
        value: mu,
        se_re: (pairwise_sum(&re) / (m - 1.0) / m).sqrt(),
        se_im: (pairwise_sum(&im) / (m - 1.0) / m).sqrt(),
    }
}

/// Unbiased sample covariance `Σ (a_i - ā)(b_i - b̄) / (M - 1)`, without
/// conjugation, with jackknife standard errors.
pub fn covariance_estimate(a: &[Complex64], b: &[Complex64]) -> ComplexEstimate {
    assert_eq!(a.len(), b.len());
    let m = a.len();
    assert!(m >= 3, "covariance needs at least three samples");
    let (ma, mb) = (mean_complex(a), mean_complex(b));
    let da: Vec<Complex64> = a.iter().map(|x| x - ma).collect();
    let db: Vec<Complex64> = b.iter().map(|x| x - mb).collect();
    let prods: Vec<Complex64> = da.iter().zip(&db).map(|(x, y)| x * y).collect();
    let sa = pairwise_sum_complex(&da);
    let sb = pairwise_sum_complex(&db);
    let sab = pairwise_sum_complex(&prods);
    let mf = m as f64;
    let value = (sab - sa * sb / mf) / (mf - 1.0);
    let loo: Vec<Complex64> = (0..m)
        .map(|i| {
            let (sa_i, sb_i) = (sa - da[i], sb - db[i]);
            (sab - prods[i] - sa_i * sb_i / (mf - 1.0)) / (mf - 2.0)
        })
        .collect();
    let re: Vec<f64> = loo.iter().map(|c| c.re).collect();
    let im: Vec<f64> = loo.iter().map(|c| c.im).collect();
    ComplexEstimate {
        value,
        se_re: jackknife_se(&re),
        se_im: jackknife_se(&im),
    }
}

/// Skewness and excess kurtosis with jackknife standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeEstimate {
    pub skewness: RealEstimate,
    pub excess_kurtosis: RealEstimate,
}

fn shape_from_sums(n: f64, s1: f64, s2: f64, s3: f64, s4: f64) -> (f64, f64) {
    let mu = s1 / n;
    let (e2, e3, e4) = (s2 / n, s3 / n, s4 / n);
    let m2 = e2 - mu * mu;
    let m3 = e3 - 3.0 * mu * e2 + 2.0 * mu.powi(3);
    let m4 = e4 - 4.0 * mu * e3 + 6.0 * mu * mu * e2 - 3.0 * mu.powi(4);
    (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}

pub fn shape_estimate(values: &[f64]) -> ShapeEstimate {
    let n = values.len() as f64;
    let c = mean(values);
    let d: Vec<f64> = values.iter().map(|v| v - c).collect();
    let pw = |k: i32| pairwise_sum(&d.iter().map(|x| x.powi(k)).collect::<Vec<_>>());
    let (s1, s2, s3, s4) = (pw(1), pw(2), pw(3), pw(4));
    let (skew, kurt) = shape_from_sums(n, s1, s2, s3, s4);
    let (mut ls, mut lk) = (Vec::with_capacity(d.len()), Vec::with_capacity(d.len()));
    for &x in &d {
        let (a, b) = shape_from_sums(n - 1.0, s1 - x, s2 - x * x, s3 - x.powi(3), s4 - x.powi(4));
        ls.push(a);
        lk.push(b);
    }
    ShapeEstimate {
        skewness: RealEstimate {
            value: skew,
            se: jackknife_se(&ls),
        },
        excess_kurtosis: RealEstimate {
            value: kurt,
            se: jackknife_se(&lk),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Asymptotic Kolmogorov tail `Q(λ) = 2 Σ (-1)^{k-1} e^{-2k²λ²}`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test of `values` against the normal law with their own
/// mean and standard deviation. `None` for a degenerate sample.
pub fn ks_normal(values: &[f64]) -> Option<KsResult> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mu = mean(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - mu) * (v - mu)).collect();
    let var = pairwise_sum(&dev) / (n as f64 - 1.0);
    if !(var > DEGENERATE_VARIANCE) {
        return None;
    }
    let law = Normal::new(mu, var.sqrt()).ok()?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let d = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = law.cdf(x);
            (f - i as f64 / nf).max((i + 1) as f64 / nf - f)
        })
        .fold(0.0, f64::max);
    let sq = nf.sqrt();
    Some(KsResult {
        statistic: d,
        p_value: kolmogorov_q((sq + 0.12 + 0.11 / sq) * d),
    })
}

/// Variances below this are treated as zero.
pub const DEGENERATE_VARIANCE: f64 = 1e-14;
