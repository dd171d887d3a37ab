//! Manifold-aligned measurement perturbations.
//!
//! An attacked sample is `z + Dec(Enc(z) + γc) - Dec(Enc(z))`, so the
//! model's reconstruction error on `z` does not leak into the shift.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Autoencoder;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Latent offset, one entry per latent coordinate.
    pub c: Vec<f64>,
    pub gamma: f64,
}

impl AttackConfig {
    /// `c = (value, ..., value)` of length `d` with `gamma = 1`.
    pub fn uniform(d: usize, value: f64) -> Self {
        Self { c: vec![value; d], gamma: 1.0 }
    }

    /// `c_j = value * spread_j`, gamma = 1.
    pub fn scaled(spread: &[f64], value: f64) -> Self {
        Self { c: spread.iter().map(|s| value * s).collect(), gamma: 1.0 }
    }

    /// Build `c` from a nominal per-coordinate value under `scale`.
    pub fn build<A: Autoencoder + ?Sized>(model: &A, z: &DMatrix<f64>, value: f64, scale: AttackScale) -> Result<Self> {
        match scale {
            AttackScale::Latent => Ok(Self::uniform(model.latent_dim(), value)),
            AttackScale::Spread => Ok(Self::scaled(&latent_spread(model, z)?, value)),
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    /// The applied offset `γc`.
    pub fn offset(&self) -> Vec<f64> {
        self.c.iter().map(|v| self.gamma * v).collect()
    }

    pub fn validate(&self, latent_dim: usize) -> Result<()> {
        if self.c.len() != latent_dim {
            return Err(Error::Dimension(format!("attack vector has {} entries, latent dimension is {latent_dim}", self.c.len())));
        }
        if !self.gamma.is_finite() || self.c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("attack vector and gamma must be finite".into()));
        }
        Ok(())
    }
}

/// Units of the latent offset `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackScale {
    /// Raw latent units.
    Latent,
    /// Multiples of each coordinate's standard deviation over reference data.
    #[default]
    Spread,
}

impl std::str::FromStr for AttackScale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "latent" => Ok(Self::Latent),
            "spread" => Ok(Self::Spread),
            other => Err(Error::Config(format!("unknown attack scale `{other}` (latent|spread)"))),
        }
    }
}

/// Population standard deviation of each latent coordinate of `Enc(z)`.
pub fn latent_spread<A: Autoencoder + ?Sized>(model: &A, z: &DMatrix<f64>) -> Result<Vec<f64>> {
    if z.ncols() == 0 {
        return Err(Error::Config("latent spread needs at least one sample".into()));
    }
    let u = model.encode(z)?;
    let n = u.ncols() as f64;
    Ok(u.row_iter()
        .map(|r| {
            let mean = r.sum() / n;
            (r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect())
}

/// Channels an attacker with limited meter access may overwrite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LimitedAttackPlan {
    channels: Vec<usize>,
}

impl LimitedAttackPlan {
    pub fn new(mut channels: Vec<usize>, m: usize) -> Result<Self> {
        channels.sort_unstable();
        channels.dedup();
        if channels.is_empty() {
            return Err(Error::Config("attack plan needs at least one channel".into()));
        }
        if let Some(&bad) = channels.iter().find(|&&c| c >= m) {
            return Err(Error::Config(format!("channel {bad} out of range for {m} channels")));
        }
        Ok(Self { channels })
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }
}

/// Perturbs every column of `z` (`m x N`) with the same latent offset.
pub fn perturb_series<A: Autoencoder + ?Sized>(model: &A, z: &DMatrix<f64>, config: &AttackConfig) -> Result<DMatrix<f64>> {
    config.validate(model.latent_dim())?;
    let u = model.encode(z)?;
    let offset = DVector::from_vec(config.offset());
    let mut shifted = u.clone();
    for mut col in shifted.column_iter_mut() {
        col += &offset;
    }
    let delta = model.decode(&shifted)? - model.decode(&u)?;
    Ok(z + delta)
}

pub fn perturb<A: Autoencoder + ?Sized>(model: &A, z: &DVector<f64>, config: &AttackConfig) -> Result<DVector<f64>> {
    let col = DMatrix::from_column_slice(z.len(), 1, z.as_slice());
    Ok(perturb_series(model, &col, config)?.column(0).into_owned())
}

/// Like [`perturb_series`] but only channels in the plan are replaced.
pub fn perturb_limited_series<A: Autoencoder + ?Sized>(
    model: &A,
    z: &DMatrix<f64>,
    config: &AttackConfig,
    plan: &LimitedAttackPlan,
) -> Result<DMatrix<f64>> {
    if plan.channels.last().is_some_and(|&c| c >= z.nrows()) {
        return Err(Error::Dimension("attack plan refers to channels beyond the data".into()));
    }
    let full = perturb_series(model, z, config)?;
    let mut out = z.clone();
    for &c in &plan.channels {
        out.set_row(c, &full.row(c));
    }
    Ok(out)
}

pub fn perturb_limited<A: Autoencoder + ?Sized>(
    model: &A,
    z: &DVector<f64>,
    config: &AttackConfig,
    plan: &LimitedAttackPlan,
) -> Result<DVector<f64>> {
    let col = DMatrix::from_column_slice(z.len(), 1, z.as_slice());
    Ok(perturb_limited_series(model, &col, config, plan)?.column(0).into_owned())
}

/// The `m0` channels with the smallest errors, lower index first on ties.
pub fn select_critical_meters(error_profile: &[f64], m0: usize) -> Result<LimitedAttackPlan> {
    let m = error_profile.len();
    if m0 == 0 || m0 > m {
        return Err(Error::Config(format!("meter budget {m0} must lie in 1..={m}")));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| error_profile[a].total_cmp(&error_profile[b]).then(a.cmp(&b)));
    order.truncate(m0);
    LimitedAttackPlan::new(order, m)
}

/// Outcome of the one-dimensional counterexample with manifold
/// `H = {x^2}`, encoder `z^(1/3)` and decoder `u^3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    /// Largest reconstruction error over sampled points of `H`.
    pub max_reconstruction_error: f64,
    pub z: f64,
    pub c: f64,
    pub output: f64,
    pub distance_to_manifold: f64,
}

pub fn lemma1_encode(z: f64) -> f64 {
    z.cbrt()
}

pub fn lemma1_decode(u: f64) -> f64 {
    u * u * u
}

/// Distance from `y` to `{x^2 : x real} = [0, inf)`.
pub fn lemma1_distance(y: f64) -> f64 {
    (-y).max(0.0)
}

pub fn lemma1_apply(z: f64, c: f64) -> f64 {
    lemma1_decode(lemma1_encode(z) + c)
}

/// Exact reconstruction on `H`, then the off-manifold output for
/// `z = 1, c = -2`.
pub fn lemma1_demo() -> Lemma1Report {
    let max_reconstruction_error = (0..=200)
        .map(|k| {
            let x = -5.0 + 0.05 * k as f64;
            let z = x * x;
            (lemma1_apply(z, 0.0) - z).abs() / z.max(1.0)
        })
        .fold(0.0, f64::max);
    let (z, c) = (1.0, -2.0);
    let output = lemma1_apply(z, c);
    Lemma1Report { max_reconstruction_error, z, c, output, distance_to_manifold: lemma1_distance(output) }
}
