//! Autoencoders over measurement vectors: the standard nonlinear
//! autoencoder, the physics-guided autoencoder with a basis-lift decoder, and
//! its masked variant.
//!
//! Datasets are `m x N` matrices with one sample per column.

mod pgae;
mod standard;

pub use pgae::{
    train_masked_pgae, train_pgae, train_pgae_weighted, LossWeighting, MaskConfig, MaskedTraining, PgAeGradients, PgAeModel,
    PgAeOptions,
};
pub use standard::{train_standard_ae, StandardAeModel};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Network;
use crate::nn::TrainConfig;
use crate::powerflow::{FreeStateLayout, StateVector};

/// Hidden width of every encoder/decoder layer.
pub const HIDDEN: usize = 64;
/// Hidden layers per network (five affine layers in total).
pub const HIDDEN_LAYERS: usize = 4;

/// Common interface used by the attack generator and detectors.
pub trait Autoencoder {
    fn channels(&self) -> usize;
    fn latent_dim(&self) -> usize;
    /// Latent codes (`d x N`) for raw measurement columns (`m x N`).
    fn encode(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>>;
    /// Raw measurement columns for latent codes.
    fn decode(&self, u: &DMatrix<f64>) -> Result<DMatrix<f64>>;

    fn reconstruct(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.decode(&self.encode(z)?)
    }
}

/// Per-channel affine standardization `(z - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &DMatrix<f64>) -> Self {
        let n = data.ncols().max(1) as f64;
        let mut mean = Vec::with_capacity(data.nrows());
        let mut scale = Vec::with_capacity(data.nrows());
        for row in data.row_iter() {
            let mu = row.sum() / n;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let sd = var.sqrt();
            mean.push(mu);
            // constant channels pass through unscaled
            scale.push(if sd > 1e-12 * mu.abs().max(1.0) { sd } else { 1.0 });
        }
        Self { mean, scale }
    }

    pub fn apply(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(z.nrows(), z.ncols(), |r, c| (z[(r, c)] - self.mean[r]) / self.scale[r])
    }

    pub fn invert(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| x[(r, c)] * self.scale[r] + self.mean[r])
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Interpretation of a latent vector as a bus state: latent coordinate `j`
/// is added to the free-state coordinate `j` (non-slack angles, then
/// non-slack magnitudes) of a flat base state. Coordinates past the
/// free-state count are not connected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentMap {
    pub base: StateVector,
    /// Column of the `[va | vm]` ordering driven by each latent coordinate.
    pub columns: Vec<Option<usize>>,
}

impl LatentMap {
    pub fn new(net: &Network, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("latent dimension must be at least 1".into()));
        }
        let free = FreeStateLayout::new(net).full_columns();
        let columns = (0..d).map(|j| free.get(j).copied()).collect();
        Ok(Self { base: StateVector::flat_start(net), columns })
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn n(&self) -> usize {
        self.base.len()
    }

    pub fn to_state(&self, u: &[f64]) -> StateVector {
        let n = self.n();
        let mut s = self.base.clone();
        for (&col, &v) in self.columns.iter().zip(u) {
            match col {
                Some(c) if c < n => s.va[c] += v,
                Some(c) => s.vm[c - n] += v,
                None => {}
            }
        }
        s
    }

    /// Pulls a `[va | vm]` gradient back to latent coordinates.
    pub fn pull_back(&self, full: &[f64], out: &mut [f64]) {
        for (o, col) in out.iter_mut().zip(&self.columns) {
            *o = col.map_or(0.0, |c| full[c]);
        }
    }
}

/// Provenance stored with every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub kind: String,
    pub case: String,
    pub schema_hash: String,
    pub latent_dim: usize,
    pub config: TrainConfig,
    pub samples: usize,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Row-major (de)serialization for dense matrices in checkpoints.
pub(crate) mod matrix_serde {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        Repr { rows: m.nrows(), cols: m.ncols(), data: m.transpose().as_slice().to_vec() }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let r = Repr::deserialize(d)?;
        if r.data.len() != r.rows * r.cols {
            return Err(serde::de::Error::custom("matrix data length does not match its shape"));
        }
        Ok(DMatrix::from_row_slice(r.rows, r.cols, &r.data))
    }
}

/// Ridge least squares `min ||Z - D F||^2 + λ||D||^2` for the decoder, using
/// whichever Gram matrix is smaller.
pub(crate) fn least_squares_decoder(z: &DMatrix<f64>, f: &DMatrix<f64>, relative_ridge: f64) -> Result<DMatrix<f64>> {
    let (p, n) = f.shape();
    let solve = |gram: DMatrix<f64>| -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let size = gram.nrows();
        let base = (gram.trace() / size as f64).max(1e-300);
        let mut lambda = relative_ridge * base;
        for _ in 0..12 {
            let mut g = gram.clone();
            for k in 0..size {
                g[(k, k)] += lambda;
            }
            if let Some(ch) = g.cholesky() {
                return Ok(ch);
            }
            lambda *= 100.0;
        }
        Err(Error::TrainingDiverged("decoder least-squares system is singular".into()))
    };
    if p <= n {
        // D = Z F' (F F' + λ)^-1
        let ch = solve(f * f.transpose())?;
        let rhs = f * z.transpose();
        Ok(ch.solve(&rhs).transpose())
    } else {
        // D = Z (F'F + λ)^-1 F'
        let ch = solve(f.transpose() * f)?;
        let coef = ch.solve(&z.transpose());
        Ok(coef.transpose() * f.transpose())
    }
}

/// Row-wise ridge least squares where row `r` of the decoder may only use
/// the columns listed in `pattern[r]`; all other entries are zero.
pub(crate) fn least_squares_decoder_pattern(
    z: &DMatrix<f64>,
    f: &DMatrix<f64>,
    relative_ridge: f64,
    pattern: &[Vec<usize>],
) -> Result<DMatrix<f64>> {
    let mut d = DMatrix::zeros(z.nrows(), f.nrows());
    for (r, cols) in pattern.iter().enumerate() {
        if cols.is_empty() {
            continue;
        }
        let fs = f.select_rows(cols.iter());
        let target = DMatrix::from_row_slice(1, z.ncols(), z.row(r).transpose().as_slice());
        let coef = least_squares_decoder(&target, &fs, relative_ridge)?;
        for (k, &c) in cols.iter().enumerate() {
            d[(r, c)] = coef[(0, k)];
        }
    }
    Ok(d)
}

pub(crate) fn check_finite(loss: f64, epoch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::TrainingDiverged(format!("non-finite loss at epoch {epoch}")))
    }
}

pub(crate) fn encoder_dims(m: usize, d: usize) -> Vec<usize> {
    let mut dims = vec![m];
    dims.extend(std::iter::repeat(HIDDEN).take(HIDDEN_LAYERS));
    dims.push(d);
    dims
}
