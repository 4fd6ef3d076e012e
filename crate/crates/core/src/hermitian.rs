use faer::{Mat, Side};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Dense Hermitian matrix, real symmetric when every entry is real.
#[derive(Debug, Clone, PartialEq)]
pub enum HermitianMatrix {
    Real(Mat<f64>),
    Complex(Mat<Complex64>),
}

impl HermitianMatrix {
    pub fn dim(&self) -> usize {
        match self {
            Self::Real(m) => m.nrows(),
            Self::Complex(m) => m.nrows(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        match self {
            Self::Real(m) => Complex64::new(m[(i, j)], 0.0),
            Self::Complex(m) => m[(i, j)],
        }
    }

    pub fn is_real(&self) -> bool {
        matches!(self, Self::Real(_))
    }

    /// Complex copy of the matrix.
    pub fn to_complex(&self) -> Mat<Complex64> {
        match self {
            Self::Real(m) => Mat::from_fn(m.nrows(), m.ncols(), |i, j| Complex64::new(m[(i, j)], 0.0)),
            Self::Complex(m) => m.clone(),
        }
    }

    /// Builds from a complex matrix, checking Hermiticity to `tol`
    /// (absolute, entrywise). The upper triangle is mirrored so the result is
    /// exactly Hermitian.
    pub fn from_complex(m: Mat<Complex64>, tol: f64) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::Dimension(format!("{}x{} matrix is not square", n, m.ncols())));
        }
        for i in 0..n {
            for j in i..n {
                if (m[(i, j)] - m[(j, i)].conj()).norm() > tol {
                    return Err(Error::Input(format!("matrix is not Hermitian at ({i}, {j})")));
                }
            }
        }
        let all_real = (0..n).all(|i| (0..n).all(|j| m[(i, j)].im == 0.0));
        Ok(if all_real {
            Self::Real(Mat::from_fn(n, n, |i, j| {
                let (a, b) = if i <= j { (i, j) } else { (j, i) };
                m[(a, b)].re
            }))
        } else {
            Self::Complex(Mat::from_fn(n, n, |i, j| {
                if i < j {
                    m[(i, j)]
                } else if i == j {
                    Complex64::new(m[(i, i)].re, 0.0)
                } else {
                    m[(j, i)].conj()
                }
            }))
        })
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Self::Real(m) => (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| m[(i, j)].is_finite())),
            Self::Complex(m) => (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| m[(i, j)].is_finite())),
        }
    }

    /// Exact Hermiticity: `a_ij == conj(a_ji)` bit for bit.
    pub fn is_exactly_hermitian(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (i..n).all(|j| self.get(i, j) == self.get(j, i).conj()))
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        if !self.is_finite() {
            return Err(Error::Input("matrix has non-finite entries".into()));
        }
        let mut ev = match self {
            Self::Real(m) => m.self_adjoint_eigenvalues(Side::Lower),
            Self::Complex(m) => m.self_adjoint_eigenvalues(Side::Lower),
        }
        .map_err(|e| Error::Input(format!("eigensolver failed: {e:?}")))?;
        ev.sort_by(f64::total_cmp);
        Ok(ev)
    }

    /// Operator norm, from the extreme eigenvalues.
    pub fn norm(&self) -> Result<f64> {
        let ev = self.eigenvalues()?;
        Ok(ev.first().map_or(0.0, |a| a.abs()).max(ev.last().map_or(0.0, |b| b.abs())))
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.get(i, i).re).sum()
    }

    /// `z I - self` as a complex matrix.
    pub fn shifted(&self, z: Complex64) -> Mat<Complex64> {
        let n = self.dim();
        Mat::from_fn(n, n, |i, j| {
            let a = -self.get(i, j);
            if i == j {
                a + z
            } else {
                a
            }
        })
    }
}
