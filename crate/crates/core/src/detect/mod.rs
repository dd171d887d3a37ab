//! Reconstruction-error detector and bypass-rate evaluation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{residual_series_each, BddConfig, Estimator, SERIES_BLOCK};
use crate::grid::Network;
use crate::models::{train_standard_ae, Autoencoder, StandardAeModel};
use crate::nn::TrainConfig;
use crate::powerflow::MeasurementSchema;

/// Feedforward autoencoder with an empirical-quantile threshold on the
/// per-sample squared reconstruction error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedDetector {
    pub model: StandardAeModel,
    pub tau: f64,
    pub alpha: f64,
    pub train_samples: usize,
    pub calibration_samples: usize,
}

impl LearnedDetector {
    /// `||z - recon(z)||^2` per column.
    pub fn errors(&self, z: &DMatrix<f64>) -> Result<Vec<f64>> {
        reconstruction_errors(&self.model, z)
    }

    /// Flags samples whose error exceeds `tau`.
    pub fn flags(&self, z: &DMatrix<f64>) -> Result<Vec<bool>> {
        Ok(self.errors(z)?.into_iter().map(|e| !(e <= self.tau)).collect())
    }

    /// Same model with the threshold recomputed for another `alpha` on the
    /// given calibration errors.
    pub fn recalibrated(&self, calibration_errors: &[f64], alpha: f64) -> Result<Self> {
        Ok(Self { tau: empirical_quantile(calibration_errors, 1.0 - alpha)?, alpha, ..self.clone() })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn reconstruction_errors<A: Autoencoder + ?Sized>(model: &A, z: &DMatrix<f64>) -> Result<Vec<f64>> {
    let r = model.reconstruct(z)? - z;
    Ok(r.column_iter().map(|c| c.norm_squared()).collect())
}

/// The `ceil(q N)`-th smallest value (1-based), clamped to the sample range.
pub fn empirical_quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Config("quantile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidProbability(q));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Ok(v[k - 1])
}

/// Chronological split: first half trains the autoencoder, second half sets
/// the threshold.
pub fn train_learned_detector(
    data: &DMatrix<f64>,
    net: &Network,
    schema: &MeasurementSchema,
    alpha: f64,
    latent: usize,
    cfg: &TrainConfig,
) -> Result<LearnedDetector> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidProbability(alpha));
    }
    let n = data.ncols();
    if n < 2 {
        return Err(Error::Config("learned detector needs at least two samples".into()));
    }
    let split = n / 2;
    let train = data.columns(0, split).into_owned();
    let calib = data.columns(split, n - split).into_owned();
    if train.row_iter().all(|r| r.max() - r.min() == 0.0) {
        log::warn!("detector training data is constant");
    }
    let model = train_standard_ae(&train, net, schema, latent, cfg)?;
    let errors = reconstruction_errors(&model, &calib)?;
    let tau = empirical_quantile(&errors, 1.0 - alpha)?;
    Ok(LearnedDetector { model, tau, alpha, train_samples: split, calibration_samples: n - split })
}

/// Bypass rates of one series against the chi-squared test and, optionally,
/// the learned detector. Failed state estimates count as detections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BypassReport {
    pub samples: usize,
    pub alpha: f64,
    pub tau_bdd: f64,
    pub dof: usize,
    pub succ_bdd: f64,
    pub succ_learn: Option<f64>,
    pub tau_learn: Option<f64>,
    pub estimation_failures: usize,
    pub mean_residual: f64,
    pub median_residual: f64,
    /// Per-sample residuals; `None` where estimation failed.
    #[serde(skip)]
    pub residuals: Vec<Option<f64>>,
    #[serde(skip)]
    pub learned_errors: Vec<f64>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// BDD residuals per column of `z`; `magnitudes` pins bus magnitudes per
/// sample for angles-only estimators.
pub fn bdd_residuals(est: &Estimator<'_>, z: &DMatrix<f64>, magnitudes: Option<&[Vec<f64>]>) -> Vec<Option<f64>> {
    let samples: Vec<DVector<f64>> = z.column_iter().map(|c| c.into_owned()).collect();
    residual_series_each(est, &samples, magnitudes, SERIES_BLOCK)
        .into_iter()
        .map(|r| match r {
            Ok(res) if res.residual.is_finite() => Some(res.residual),
            Ok(_) => None,
            Err(e) => {
                log::debug!("estimation failed: {e}");
                None
            }
        })
        .collect()
}

/// Bypass statistics from precomputed residuals and learned-detector errors.
pub fn summarize_bypass(residuals: Vec<Option<f64>>, bdd: &BddConfig, learned: Option<(&[f64], f64)>) -> Result<BypassReport> {
    let n = residuals.len();
    if n == 0 {
        return Err(Error::Config("cannot evaluate an empty series".into()));
    }
    let ok: Vec<f64> = residuals.iter().flatten().copied().collect();
    let passed = ok.iter().filter(|r| **r < bdd.tau).count();
    let (succ_learn, tau_learn, learned_errors) = match learned {
        Some((errors, tau)) => {
            if errors.len() != n {
                return Err(Error::Dimension("learned errors and residuals differ in length".into()));
            }
            let pass = errors.iter().filter(|e| **e <= tau).count();
            (Some(pass as f64 / n as f64), Some(tau), errors.to_vec())
        }
        None => (None, None, Vec::new()),
    };
    Ok(BypassReport {
        samples: n,
        alpha: bdd.alpha,
        tau_bdd: bdd.tau,
        dof: bdd.dof,
        succ_bdd: passed as f64 / n as f64,
        succ_learn,
        tau_learn,
        estimation_failures: n - ok.len(),
        mean_residual: if ok.is_empty() { f64::NAN } else { ok.iter().sum::<f64>() / ok.len() as f64 },
        median_residual: median(&ok),
        residuals,
        learned_errors,
    })
}

pub fn evaluate_bypass(
    z: &DMatrix<f64>,
    est: &Estimator<'_>,
    bdd: &BddConfig,
    magnitudes: Option<&[Vec<f64>]>,
    learned: Option<&LearnedDetector>,
) -> Result<BypassReport> {
    if z.ncols() == 0 {
        return Err(Error::Config("cannot evaluate an empty series".into()));
    }
    if bdd.dof != est.dof() {
        return Err(Error::Config(format!("BDD configured for dof {}, schema gives {}", bdd.dof, est.dof())));
    }
    let residuals = bdd_residuals(est, z, magnitudes);
    let errors = learned.map(|d| d.errors(z)).transpose()?;
    summarize_bypass(residuals, bdd, errors.as_deref().zip(learned.map(|d| d.tau)))
}
