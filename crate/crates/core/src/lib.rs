//! Fractional Volterra processes `X_i(t) = ∫_0^t x_i(t-s) dB^H(s)` driven by
//! fractional Brownian motion with `H > 1/2`.
//!
//! The crate simulates such processes, computes the limit covariance `Λ`
//! of the normalized functionals `(1/√T)∫ f_i(X_i/σ_i)` by adaptive
//! quadrature, provides the closed forms of the fractional CAR(2) model with
//! a method-of-moments estimator, and checks the limit law by Monte Carlo.

pub mod asymptotics;
pub mod car2;
pub mod config;
pub mod error;
pub mod fgn;
mod gauss;
pub mod hermite;
pub mod kernels;
pub mod mc;
pub mod quadrature;
pub mod selftest;
pub mod sim;

pub use asymptotics::{eta, lambda_matrix, EtaVector, LambdaMatrix, ModelSpec};
pub use car2::{Car2Params, SpectralConstants};
pub use error::{Error, Result};
pub use fgn::{HurstParam, SimGrid};
pub use hermite::{HermiteExpansion, PolynomialSpec};
pub use kernels::KernelSpec;
pub use mc::{ExperimentConfig, MCReport};
pub use quadrature::{IntegralResult, QuadConfig};
pub use sim::{PathBundle, PathSimulator};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Version of every JSON document the crate writes.
pub const SCHEMA_VERSION: u32 = 1;
