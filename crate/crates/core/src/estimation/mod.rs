//! Weighted least-squares state estimation, the residual objective and
//! chi-squared bad-data detection.

mod chi2;
mod wls;

pub use chi2::{chi2_cdf, chi2_pdf, chi2_quantile, gamma_p, gamma_q, ln_gamma};
pub use wls::{
    residual_error, residual_series, residual_series_each, wls_estimate, EstimationResult, Estimator, WlsOptions, SERIES_BLOCK,
};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::powerflow::StateVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BddConfig {
    pub alpha: f64,
    pub dof: usize,
    pub tau: f64,
}

impl BddConfig {
    pub fn new(alpha: f64, dof: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidProbability(alpha));
        }
        if dof == 0 {
            return Err(Error::Config("BDD needs at least one degree of freedom".into()));
        }
        Ok(Self { alpha, dof, tau: chi2_quantile(dof, 1.0 - alpha)? })
    }

    pub fn for_estimator(alpha: f64, est: &Estimator<'_>) -> Result<Self> {
        Self::new(alpha, est.dof())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BddOutcome {
    pub anomalous: bool,
    pub residual: f64,
    pub state_hat: StateVector,
}

/// Chi-squared test on the WLS residual: anomalous iff `r(z) >= tau`.
pub fn bdd_detect(
    z: &DVector<f64>,
    config: &BddConfig,
    est: &Estimator<'_>,
    warm: Option<&StateVector>,
) -> Result<BddOutcome> {
    if config.dof != est.dof() {
        return Err(Error::Config(format!("BDD configured for dof {}, schema gives {}", config.dof, est.dof())));
    }
    let res = est.residual(z, warm)?;
    Ok(BddOutcome { anomalous: res.residual >= config.tau, residual: res.residual, state_hat: res.state_hat })
}
