//! Numerical laboratory for linear spectral statistics of deformed Wigner
//! matrices `X_N = W_N + D_N`: deterministic equivalents via the Pastur
//! equation, the limiting bias and covariance kernel of resolvent traces,
//! exact pairing calculus for Gaussian words, and a reproducible Monte Carlo
//! harness that checks the formulas against simulation.

pub mod ensemble;
pub mod error;
pub mod freeconv;
pub mod hermitian;
pub mod infinitesimal;
pub mod montecarlo;
pub mod quad;
pub mod spectral;
pub mod stats;
pub mod testfn;
pub mod theory;

pub use error::{Error, Result};
pub use num_complex::Complex64;
