use num_complex::Complex64;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    Param(String),

    #[error("degenerate truncation: {0}")]
    DegenerateTruncation(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("{0} requires a non-real spectral parameter, got {1}")]
    Domain(&'static str, Complex64),

    #[error("stieltjes transform evaluated at atom {0}")]
    Pole(f64),

    #[error("pastur solver did not converge at z = {z} after {iterations} iterations (residual {residual:e})")]
    Solver {
        z: Complex64,
        iterations: usize,
        residual: f64,
    },

    #[error("near-edge singularity at z = {z}: |1 + v G'(omega)| = {margin:e}")]
    NearEdge { z: Complex64, margin: f64 },

    #[error("singular denominator in {what} at z = {z} (|d| = {magnitude:e})")]
    Singularity {
        what: &'static str,
        z: Complex64,
        magnitude: f64,
    },

    #[error("near-singular covariance kernel at ({}, {}): branch margin {:e}", .0.z1, .0.z2, .0.branch_margin)]
    NearSingularKernel(Box<crate::theory::KernelValue>),

    #[error("resolvent fit residual {residual:e} exceeds threshold {threshold:e}")]
    Representation { residual: f64, threshold: f64 },

    #[error("extrapolation unstable: {0}")]
    Accuracy(String),

    #[error("support window detection failed: {0}")]
    Support(String),

    #[error("sample {index} failed: {source}")]
    Sample {
        index: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("infinitesimal freeness violated: {0}")]
    Violation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
