//! Spectra, resolvent traces and linear spectral statistics, plus exact
//! checks of the Schur complement and resolvent identities.

use std::io::Write;

use faer::linalg::solvers::DenseSolveCore;
use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ensemble::{SeedPath, WignerSample};
use crate::error::{Error, Result};
use crate::hermitian::HermitianMatrix;
use crate::testfn::TestFunction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    pub params_hash: Option<String>,
    pub seed_path: Option<SeedPath>,
}

impl Spectrum {
    /// Sorts the values; rejects non-finite entries.
    pub fn new(mut eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("spectrum has non-finite values".into()));
        }
        eigenvalues.sort_by(f64::total_cmp);
        Ok(Self {
            eigenvalues,
            params_hash: None,
            seed_path: None,
        })
    }

    pub fn of_matrix(m: &HermitianMatrix) -> Result<Self> {
        Self::new(m.eigenvalues()?)
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut out: W, header: &[String]) -> Result<()> {
        for line in header {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "eigenvalue")?;
        for x in &self.eigenvalues {
            writeln!(out, "{x:e}")?;
        }
        Ok(())
    }
}

pub fn eigenvalues(sample: &WignerSample) -> Result<Spectrum> {
    let mut s = Spectrum::of_matrix(&sample.matrix)?;
    s.params_hash = Some(sample.params_hash.clone());
    s.seed_path = Some(sample.seed_path);
    Ok(s)
}

/// `Tr R(z) = Σ_i 1/(z - λ_i)`.
pub fn trace_resolvent(spec: &Spectrum, z: Complex64) -> Result<Complex64> {
    if z.im == 0.0 || !z.is_finite() {
        return Err(Error::Domain("trace_resolvent", z));
    }
    Ok(spec.eigenvalues.iter().map(|&l| (z - l).inv()).sum())
}

/// `‖R(z)‖ = max_i 1/|z - λ_i|`.
pub fn resolvent_norm(spec: &Spectrum, z: Complex64) -> Result<f64> {
    if z.im == 0.0 {
        return Err(Error::Domain("resolvent_norm", z));
    }
    Ok(spec.eigenvalues.iter().map(|&l| (z - l).norm().recip()).fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearStatistic {
    pub value: Complex64,
    pub testfn_id: String,
    pub centered: bool,
}

/// `Σ_i φ(λ_i)`, uncentered.
pub fn linear_statistic(spec: &Spectrum, phi: &TestFunction) -> LinearStatistic {
    let mut value: Complex64 = spec.eigenvalues.iter().map(|&l| phi.evaluate(l)).sum();
    if phi.is_real() {
        value.im = 0.0;
    }
    LinearStatistic {
        value,
        testfn_id: phi.id().to_string(),
        centered: false,
    }
}

fn inverse(a: &Mat<Complex64>) -> Mat<Complex64> {
    a.partial_piv_lu().inverse()
}

fn trace(a: &Mat<Complex64>) -> Complex64 {
    (0..a.nrows()).map(|i| a[(i, i)]).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchurReport {
    /// `|(A^{-1})_kk - 1/(A_kk - r B^{-1} c)|`
    pub diagonal_residual: f64,
    /// `|Tr A^{-1} - Tr B^{-1} - (1 + r B^{-2} c)/(A_kk - r B^{-1} c)|`
    pub trace_residual: f64,
    /// `|Tr R(z) - Tr R^{(k)}(z)|`, bounded by `1/|Im z|`.
    pub minor_trace_gap: f64,
    pub tolerance: f64,
}

impl SchurReport {
    pub fn passes(&self, z: Complex64) -> bool {
        self.diagonal_residual <= self.tolerance
            && self.trace_residual <= self.tolerance
            && self.minor_trace_gap <= z.im.abs().recip() * (1.0 + 1e-10)
    }
}

pub fn schur_tolerance(n: usize, z: Complex64) -> f64 {
    1e-8 * n as f64 / (z.im * z.im)
}

/// Both Schur complement identities for `A = zI - X` with row and column
/// `k` removed for `B`.
pub fn verify_schur(m: &HermitianMatrix, k: usize, z: Complex64) -> Result<SchurReport> {
    let n = m.dim();
    if k >= n {
        return Err(Error::Dimension(format!("index {k} out of range for dimension {n}")));
    }
    if z.im == 0.0 {
        return Err(Error::Domain("verify_schur", z));
    }
    let a = m.shifted(z);
    let a_inv = inverse(&a);
    let skip = |i: usize| if i < k { i } else { i + 1 };
    let b = Mat::from_fn(n - 1, n - 1, |i, j| a[(skip(i), skip(j))]);
    let r = Mat::from_fn(1, n - 1, |_, j| a[(k, skip(j))]);
    let c = Mat::from_fn(n - 1, 1, |i, _| a[(skip(i), k)]);
    let (b_inv, minor_trace) = if n > 1 {
        let b_inv = inverse(&b);
        let t = trace(&b_inv);
        (b_inv, t)
    } else {
        (b.clone(), Complex64::new(0.0, 0.0))
    };
    let b_inv_c = &b_inv * &c;
    let schur = a[(k, k)] - if n > 1 { (&r * &b_inv_c)[(0, 0)] } else { Complex64::new(0.0, 0.0) };
    let r_b2_c = if n > 1 { (&r * (&b_inv * &b_inv_c))[(0, 0)] } else { Complex64::new(0.0, 0.0) };
    let full_trace = trace(&a_inv);
    Ok(SchurReport {
        diagonal_residual: (a_inv[(k, k)] - schur.inv()).norm(),
        trace_residual: (full_trace - minor_trace - (Complex64::new(1.0, 0.0) + r_b2_c) / schur).norm(),
        minor_trace_gap: (full_trace - minor_trace).norm(),
        tolerance: schur_tolerance(n, z),
    })
}

pub fn resolvent_identity_tolerance(z1: Complex64, z2: Complex64) -> f64 {
    1e-9 / (z1.im.abs() * z2.im.abs())
}

/// Max-entry residual of
/// `R1(z1) - R2(z2) = R1(z1) ((z2 - z1) I + M1 - M2) R2(z2)`.
pub fn verify_resolvent_identity(
    m1: &HermitianMatrix,
    m2: &HermitianMatrix,
    z1: Complex64,
    z2: Complex64,
) -> Result<f64> {
    if m1.dim() != m2.dim() {
        return Err(Error::Dimension(format!("{} vs {}", m1.dim(), m2.dim())));
    }
    if z1.im == 0.0 {
        return Err(Error::Domain("verify_resolvent_identity", z1));
    }
    if z2.im == 0.0 {
        return Err(Error::Domain("verify_resolvent_identity", z2));
    }
    let n = m1.dim();
    let r1 = inverse(&m1.shifted(z1));
    let r2 = inverse(&m2.shifted(z2));
    let middle = Mat::from_fn(n, n, |i, j| {
        let d = m1.get(i, j) - m2.get(i, j);
        if i == j {
            d + (z2 - z1)
        } else {
            d
        }
    });
    let rhs = &r1 * (&middle * &r2);
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((r1[(i, j)] - r2[(i, j)] - rhs[(i, j)]).norm());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{sample, Deformation, EnsembleParams};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn real(rows: &[&[f64]]) -> HermitianMatrix {
        let n = rows.len();
        HermitianMatrix::Real(Mat::from_fn(n, n, |i, j| rows[i][j]))
    }

    #[test]
    fn small_spectra() {
        assert_eq!(Spectrum::of_matrix(&real(&[&[1.0, 0.0], &[0.0, -1.0]])).unwrap().eigenvalues(), &[-1.0, 1.0]);
        let s = Spectrum::of_matrix(&real(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        assert!((s.eigenvalues()[0] + 1.0).abs() < 1e-14 && (s.eigenvalues()[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        assert!(Spectrum::of_matrix(&real(&[&[f64::NAN]])).is_err());
    }

    #[test]
    fn trace_resolvent_examples() {
        let s = Spectrum::new(vec![1.0, -1.0]).unwrap();
        let t = trace_resolvent(&s, c(0.0, 2.0)).unwrap();
        assert!((t - c(0.0, -0.8)).norm() < 1e-15);
        let zeros = Spectrum::new(vec![0.0; 5]).unwrap();
        let z = c(0.3, -1.1);
        assert!((trace_resolvent(&zeros, z).unwrap() - 5.0 / z).norm() < 1e-14);
        assert!(trace_resolvent(&s, c(1.0, 0.0)).is_err());
        let z = c(0.4, 0.9);
        assert_eq!(trace_resolvent(&s, z.conj()).unwrap(), trace_resolvent(&s, z).unwrap().conj());
    }

    #[test]
    fn linear_statistic_basics() {
        let s = Spectrum::new(vec![-0.5, 0.25, 2.0]).unwrap();
        assert_eq!(linear_statistic(&s, &TestFunction::constant(1.0)).value, c(3.0, 0.0));
        let x = TestFunction::polynomial(vec![0.0, 1.0]).unwrap();
        assert_eq!(linear_statistic(&s, &x).value, c(1.75, 0.0));
        let z = c(0.1, 0.7);
        let r = linear_statistic(&s, &TestFunction::resolvent(z).unwrap());
        assert_eq!(r.value, trace_resolvent(&s, z).unwrap());
    }

    #[test]
    fn schur_on_2x2() {
        let m = HermitianMatrix::from_complex(
            Mat::from_fn(2, 2, |i, j| match (i, j) {
                (0, 0) => c(0.5, 0.0),
                (1, 1) => c(-0.2, 0.0),
                (0, 1) => c(0.3, 0.4),
                _ => c(0.3, -0.4),
            }),
            0.0,
        )
        .unwrap();
        let rep = verify_schur(&m, 1, c(0.0, 1.0)).unwrap();
        assert!(rep.diagonal_residual <= 1e-12 && rep.trace_residual <= 1e-12, "{rep:?}");
    }

    #[test]
    fn schur_on_gue_sample() {
        let p = EnsembleParams::gue(50, 1.0, Deformation::zeros(50)).unwrap();
        let s = sample(&p, 5, 0).unwrap();
        let z = c(0.0, 0.5);
        for k in [0, 17, 49] {
            let rep = verify_schur(&s.matrix, k, z).unwrap();
            assert!(rep.passes(z), "{rep:?}");
        }
    }

    #[test]
    fn resolvent_identity_scalar_case() {
        let zero = real(&[&[0.0; 3], &[0.0; 3], &[0.0; 3]]);
        let (z1, z2) = (c(1.0, 1.0), c(0.0, 2.0));
        assert!(verify_resolvent_identity(&zero, &zero, z1, z2).unwrap() < 1e-15);
        // R1 - R2 = (z2 - z1)/(z1 z2) I for zero matrices
        let d = 1.0 / z1 - 1.0 / z2;
        assert!((d - (z2 - z1) / (z1 * z2)).norm() < 1e-15);
        let m = real(&[&[1.0, 2.0], &[2.0, -1.0]]);
        assert_eq!(verify_resolvent_identity(&m, &m, z1, z1).unwrap(), 0.0);
    }
}
