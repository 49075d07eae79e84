//! Verification of the regularized martingale problem.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod dynamics;
pub mod qform;
pub mod stats;

pub use dynamics::{drift_term_bound, drift_term_magnitude, exact_qv_rate, exact_qv_rate_with};
pub use qform::{eigenfunction_check, q_form_direct, q_form_spectral, MeasureRef};
pub use stats::{
    generator_test, increment_moment_scan, martingale_sample, martingale_statistic, qv_convergence,
    realized_qv, MartingaleReport, MartingaleSample, MomentScan, QvReport, ScalarPoly,
};

/// Kernel parameters and the diffusion coefficient of the compensator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QFormSpec {
    pub beta: f64,
    pub k_trunc: usize,
    pub diffusion_coeff: f64,
}

impl QFormSpec {
    /// Truncation `max(N, 64)`.
    pub fn default_truncation(n: usize) -> usize {
        n.max(64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_trunc < 1 {
            return Err(Error::domain("kernel truncation must be at least 1"));
        }
        if !(self.beta > 1.0) {
            return Err(Error::domain(format!("kernel needs beta > 1, got {}", self.beta)));
        }
        Ok(())
    }
}
