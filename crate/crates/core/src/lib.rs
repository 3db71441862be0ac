//! Markovian pricing-kernel recovery.
//!
//! Given risk-neutral diffusion dynamics and a discount rate, this crate
//! classifies the generator's criticality, computes Martin kernels and
//! admissible principal functions, constructs recovered objective-measure
//! dynamics from a `(beta, mu)` directive, and verifies every claim by PDE
//! residuals, Monte Carlo, and closed-form checks.

pub mod admissibility;
pub mod config;
pub mod error;
pub mod expr;
pub mod field;
pub mod martin;
pub mod model;
pub mod quad;
pub mod recovery;
pub mod rng;
pub mod schema;
pub mod simulate;
pub mod sturm;

pub use config::NumericsConfig;
pub use error::{Error, Result};

/// Shared oracle models for unit tests.
#[cfg(test)]
pub(crate) mod testkit {
    use std::sync::Arc;

    use crate::config::NumericsConfig;
    use crate::field::{ConstantMatrix, ConstantScalar, ConstantVector};
    use crate::model::{DiffusionModel, Domain};

    pub fn cfg() -> NumericsConfig {
        NumericsConfig::default()
    }

    /// Log-price model: dX = 0.03 dt + 0.2 dW, r = 0.05 on the whole line.
    pub fn gbm_log_model() -> DiffusionModel {
        DiffusionModel::new(
            Arc::new(ConstantVector::new(vec![0.03])),
            Arc::new(ConstantMatrix::scaled_identity(1, 0.2)),
            Arc::new(ConstantScalar::new(1, 0.05)),
            Domain::whole_space(1),
            &cfg(),
        )
        .unwrap()
    }

    /// 1D model with h'' = h: k = 0, sigma = sqrt(2), r = 1.
    pub fn cosh_model() -> DiffusionModel {
        DiffusionModel::new(
            Arc::new(ConstantVector::new(vec![0.0])),
            Arc::new(ConstantMatrix::scaled_identity(1, 2f64.sqrt())),
            Arc::new(ConstantScalar::new(1, 1.0)),
            Domain::whole_space(1),
            &cfg(),
        )
        .unwrap()
    }

    /// 2D scaled Brownian motion: sigma = sqrt(2) I, k = 0, r = 1.
    pub fn bm2_model() -> DiffusionModel {
        DiffusionModel::new(
            Arc::new(ConstantVector::new(vec![0.0, 0.0])),
            Arc::new(ConstantMatrix::scaled_identity(2, 2f64.sqrt())),
            Arc::new(ConstantScalar::new(2, 1.0)),
            Domain::whole_space(2),
            &cfg(),
        )
        .unwrap()
    }

    /// Root value of the characteristic quadratic `a/2 alpha^2 + k alpha +
    /// (lambda - r)`: the scalar oracle for exponential eigenfunctions.
    pub fn quadratic_lambda(a: f64, k: f64, r: f64, alpha: f64) -> f64 {
        r - 0.5 * a * alpha * alpha - k * alpha
    }
}
