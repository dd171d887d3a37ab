use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_finite, encoder_dims, Autoencoder, ModelMeta, Standardizer};
use crate::error::{Error, Result};
use crate::grid::Network;
use crate::nn::{adam_step, epoch_batches, gather_columns, mlp_backward, mlp_forward, Activation, AdamState, MlpParams, TrainConfig};
use crate::powerflow::MeasurementSchema;

/// Fully-connected tanh encoder and mirrored decoder, trained on
/// standardized measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardAeModel {
    pub encoder: MlpParams,
    pub decoder: MlpParams,
    pub standardizer: Standardizer,
    pub meta: ModelMeta,
}

impl StandardAeModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        if model.encoder.output_dim() != model.decoder.input_dim() || model.decoder.output_dim() != model.standardizer.len() {
            return Err(Error::Config("checkpoint pieces have inconsistent shapes".into()));
        }
        Ok(model)
    }

    /// Mean over samples of the squared reconstruction error in raw units.
    pub fn loss(&self, z: &DMatrix<f64>) -> Result<f64> {
        let r = self.reconstruct(z)? - z;
        Ok(r.norm_squared() / z.ncols() as f64)
    }
}

impl Autoencoder for StandardAeModel {
    fn channels(&self) -> usize {
        self.standardizer.len()
    }

    fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    fn encode(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if z.nrows() != self.channels() {
            return Err(Error::Dimension(format!("data has {} channels, model expects {}", z.nrows(), self.channels())));
        }
        self.encoder.predict(&self.standardizer.apply(z))
    }

    fn decode(&self, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.standardizer.invert(&self.decoder.predict(u)?))
    }
}

pub fn train_standard_ae(
    data: &DMatrix<f64>,
    net: &Network,
    schema: &MeasurementSchema,
    d: usize,
    cfg: &TrainConfig,
) -> Result<StandardAeModel> {
    cfg.validate()?;
    let m = schema.len();
    if data.nrows() != m {
        return Err(Error::Dimension(format!("data has {} channels, schema has {m}", data.nrows())));
    }
    if data.ncols() == 0 || d == 0 {
        return Err(Error::Config("training needs samples and a positive latent dimension".into()));
    }
    let mut init = ChaCha8Rng::seed_from_u64(cfg.seed);
    let enc_dims = encoder_dims(m, d);
    let dec_dims: Vec<usize> = enc_dims.iter().rev().copied().collect();
    let mut encoder = MlpParams::glorot(&enc_dims, Activation::Tanh, &mut init)?;
    let mut decoder = MlpParams::glorot(&dec_dims, Activation::Tanh, &mut init)?;
    let standardizer = Standardizer::fit(data);
    let xs = standardizer.apply(data);

    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle.set_stream(1);
    let mut adam = AdamState::default();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for idx in epoch_batches(data.ncols(), cfg.batch_size, &mut shuffle) {
            let xb = gather_columns(&xs, &idx);
            let batch = idx.len() as f64;
            let (u, enc_cache) = mlp_forward(&encoder, &xb)?;
            let (y, dec_cache) = mlp_forward(&decoder, &u)?;
            let e = y - &xb;
            let loss = e.norm_squared() / batch;
            check_finite(loss, epoch)?;
            let (dec_grads, grad_u) = mlp_backward(&decoder, &dec_cache, &(e * (2.0 / batch)));
            let (enc_grads, _) = mlp_backward(&encoder, &enc_cache, &grad_u);
            let mut g = enc_grads.tensors();
            g.extend(dec_grads.tensors());
            let mut params = encoder.tensors_mut();
            params.extend(decoder.tensors_mut());
            adam_step(&mut params, &g, &mut adam, cfg)?;
            total += loss * batch;
        }
        history.push(total / data.ncols() as f64);
    }
    Ok(StandardAeModel {
        encoder,
        decoder,
        standardizer,
        meta: ModelMeta {
            kind: "ae".into(),
            case: net.name().to_string(),
            schema_hash: schema.hash(),
            latent_dim: d,
            config: *cfg,
            samples: data.ncols(),
            loss_history: history,
        },
    })
}
