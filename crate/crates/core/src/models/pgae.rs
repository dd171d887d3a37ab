use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_finite, encoder_dims, least_squares_decoder, least_squares_decoder_pattern, matrix_serde, Autoencoder, LatentMap, ModelMeta, Standardizer,
};
use crate::basis::{basis_vjp_into, block_pattern, eval_basis_into, LiftedBasisSpec};
use crate::error::{Error, Result};
use crate::grid::Network;
use crate::nn::{adam_step, epoch_batches, gather_columns, mlp_backward, mlp_forward, Activation, AdamState, MlpGrads, MlpParams, TrainConfig};
use crate::powerflow::MeasurementSchema;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgAeOptions {
    /// Epochs before the decoder is refit by least squares.
    pub warmup_epochs: usize,
    /// Ridge weight of the decoder least-squares fits, relative to the mean
    /// diagonal of the Gram matrix.
    pub ridge: f64,
    pub weighting: LossWeighting,
    /// Restrict each decoder row to the lifted terms of its home bus.
    pub block_decoder: bool,
    /// Factor applied to the initial weights of the encoder's output layer.
    #[serde(default = "one")]
    pub latent_init_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for PgAeOptions {
    fn default() -> Self {
        Self { warmup_epochs: 50, ridge: 1e-8, weighting: LossWeighting::Raw, block_decoder: false, latent_init_scale: 0.1 }
    }
}

/// Per-channel weights of the reconstruction loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossWeighting {
    /// Plain squared error in p.u.
    Raw,
    /// Each channel divided by its sample standard deviation.
    Standardized,
}

impl LossWeighting {
    pub fn weights(self, standardizer: &Standardizer) -> Vec<f64> {
        match self {
            Self::Raw => Vec::new(),
            Self::Standardized => standardizer.scale.iter().map(|s| 1.0 / (s * s)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    /// Expected number of kept channels `m0`; each channel is kept with
    /// probability `m0 / m`.
    pub keep_count: usize,
    pub seed: u64,
}

/// Encoder, basis lift and strictly linear decoder:
/// `z -> D f(state(Enc(standardize(z))))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgAeModel {
    pub encoder: MlpParams,
    pub spec: LiftedBasisSpec,
    pub latent: LatentMap,
    /// `m x p`, no bias.
    #[serde(with = "matrix_serde")]
    pub decoder: DMatrix<f64>,
    pub standardizer: Standardizer,
    pub options: PgAeOptions,
    pub mask: Option<MaskConfig>,
    /// Allowed decoder columns per row; `None` leaves `D` dense.
    #[serde(default)]
    pub decoder_pattern: Option<Vec<Vec<usize>>>,
    /// Per-channel loss weights; empty means all ones.
    #[serde(default)]
    pub channel_weights: Vec<f64>,
    pub meta: ModelMeta,
}

#[derive(Debug, Clone)]
pub struct PgAeGradients {
    pub encoder: MlpGrads,
    pub decoder: DMatrix<f64>,
}

impl PgAeModel {
    /// Untrained model: Glorot encoder and zero decoder.
    pub fn init(net: &Network, schema: &MeasurementSchema, spec: LiftedBasisSpec, d: usize, cfg: &TrainConfig, standardizer: Standardizer) -> Result<Self> {
        if spec.n() != net.n() {
            return Err(Error::Dimension(format!("basis covers {} buses, network has {}", spec.n(), net.n())));
        }
        let latent = LatentMap::new(net, d)?;
        let m = schema.len();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let encoder = MlpParams::glorot(&encoder_dims(m, d), Activation::Tanh, &mut rng)?;
        let p = spec.p();
        Ok(Self {
            encoder,
            spec,
            latent,
            decoder: DMatrix::zeros(m, p),
            standardizer,
            options: PgAeOptions::default(),
            mask: None,
            decoder_pattern: None,
            channel_weights: Vec::new(),
            meta: ModelMeta {
                kind: "pgae".into(),
                case: net.name().to_string(),
                schema_hash: schema.hash(),
                latent_dim: d,
                config: *cfg,
                samples: 0,
                loss_history: Vec::new(),
            },
        })
    }

    /// Basis values (`p x N`) for latent codes (`d x N`).
    pub fn lift(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        let mut f = DMatrix::zeros(self.spec.p(), u.ncols());
        for j in 0..u.ncols() {
            let state = self.latent.to_state(u.column(j).as_slice());
            eval_basis_into(&self.spec, &state, f.column_mut(j).as_mut_slice());
        }
        f
    }

    fn check_rows(&self, z: &DMatrix<f64>) -> Result<()> {
        if z.nrows() != self.decoder.nrows() {
            return Err(Error::Dimension(format!("data has {} channels, model expects {}", z.nrows(), self.decoder.nrows())));
        }
        Ok(())
    }

    /// Weighted reconstruction loss and its gradients for a batch given as
    /// encoder input (already standardized) and raw targets.
    ///
    /// Loss is `(1/B) sum_j sum_i w_ij (D f_j - z_ij)^2` with `w = 1` when no
    /// weights are given.
    pub fn loss_and_grads_standardized(
        &self,
        input: &DMatrix<f64>,
        target: &DMatrix<f64>,
        weights: Option<&DMatrix<f64>>,
    ) -> Result<(f64, PgAeGradients)> {
        let batch = input.ncols() as f64;
        let (u, cache) = mlp_forward(&self.encoder, input)?;
        let f = self.lift(&u);
        let mut e = &self.decoder * &f - target;
        if let Some(w) = weights {
            e.component_mul_assign(w);
        }
        // with 0/1 weights, w (Df - z)^2 = (w (Df - z))^2
        let mut g = &e * (2.0 / batch);
        if !self.channel_weights.is_empty() {
            for (mut row, w) in g.row_iter_mut().zip(&self.channel_weights) {
                row *= *w;
            }
        }
        let loss = 0.5 * g.iter().zip(e.iter()).map(|(a, b)| a * b).sum::<f64>();
        let grad_d = &g * f.transpose();
        let grad_f = self.decoder.transpose() * &g;

        let n = self.latent.n();
        let mut full = vec![0.0; 2 * n];
        let mut grad_u = DMatrix::zeros(u.nrows(), u.ncols());
        for j in 0..u.ncols() {
            let state = self.latent.to_state(u.column(j).as_slice());
            basis_vjp_into(&self.spec, &state, grad_f.column(j).as_slice(), &mut full);
            self.latent.pull_back(&full, grad_u.column_mut(j).as_mut_slice());
        }
        let (grad_enc, _) = mlp_backward(&self.encoder, &cache, &grad_u);
        let grad_d = match &self.decoder_pattern {
            Some(pattern) => {
                let mut masked = DMatrix::zeros(grad_d.nrows(), grad_d.ncols());
                for (r, cols) in pattern.iter().enumerate() {
                    for &c in cols {
                        masked[(r, c)] = grad_d[(r, c)];
                    }
                }
                masked
            }
            None => grad_d,
        };
        Ok((loss, PgAeGradients { encoder: grad_enc, decoder: grad_d }))
    }

    /// Unweighted loss and gradients for raw measurement columns.
    pub fn loss_and_grads(&self, z: &DMatrix<f64>) -> Result<(f64, PgAeGradients)> {
        self.check_rows(z)?;
        self.loss_and_grads_standardized(&self.standardizer.apply(z), z, None)
    }

    /// Training objective on full inputs: weighted squared error per sample.
    pub fn loss(&self, z: &DMatrix<f64>) -> Result<f64> {
        let r = self.reconstruct(z)? - z;
        let total: f64 = if self.channel_weights.is_empty() {
            r.norm_squared()
        } else {
            r.row_iter().zip(&self.channel_weights).map(|(row, w)| w * row.norm_squared()).sum()
        };
        Ok(total / z.ncols() as f64)
    }

    fn refit_decoder(&mut self, z: &DMatrix<f64>, xs: &DMatrix<f64>) -> Result<()> {
        let u = self.encoder.predict(xs)?;
        let f = self.lift(&u);
        self.decoder = match &self.decoder_pattern {
            Some(pattern) => least_squares_decoder_pattern(z, &f, self.options.ridge, pattern)?,
            None => least_squares_decoder(z, &f, self.options.ridge)?,
        };
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        if model.decoder.ncols() != model.spec.p() || model.latent.dim() != model.encoder.output_dim() {
            return Err(Error::Config("checkpoint pieces have inconsistent shapes".into()));
        }
        Ok(model)
    }
}

impl Autoencoder for PgAeModel {
    fn channels(&self) -> usize {
        self.decoder.nrows()
    }

    fn latent_dim(&self) -> usize {
        self.latent.dim()
    }

    fn encode(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(z)?;
        self.encoder.predict(&self.standardizer.apply(z))
    }

    fn decode(&self, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if u.nrows() != self.latent.dim() {
            return Err(Error::Dimension(format!("latent has {} rows, model expects {}", u.nrows(), self.latent.dim())));
        }
        Ok(&self.decoder * self.lift(u))
    }
}

fn validate_inputs(data: &DMatrix<f64>, net: &Network, schema: &MeasurementSchema, d: usize, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if data.ncols() == 0 {
        return Err(Error::Config("training set is empty".into()));
    }
    if data.nrows() != schema.len() {
        return Err(Error::Dimension(format!("data has {} channels, schema has {}", data.nrows(), schema.len())));
    }
    if d == 0 {
        return Err(Error::Config("latent dimension must be at least 1".into()));
    }
    if d > net.free_state_dim() {
        log::warn!("latent dimension {d} exceeds the {} free states; extra coordinates are unused", net.free_state_dim());
    }
    Ok(())
}

/// Fits encoder and decoder jointly with Adam. The decoder starts from a
/// least-squares fit to the initial encoder and is refit once after the
/// warm-up epochs.
fn fit(model: &mut PgAeModel, data: &DMatrix<f64>, cfg: &TrainConfig, keep: Option<usize>) -> Result<()> {
    let xs = model.standardizer.apply(data);
    let m = data.nrows();
    model.refit_decoder(data, &xs)?;

    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle.set_stream(1);
    let mut mask_rng = ChaCha8Rng::seed_from_u64(model.mask.map_or(cfg.seed, |mk| mk.seed));
    mask_rng.set_stream(2);
    let keep_prob = keep.map(|k| k as f64 / m as f64);

    let mut adam = AdamState::default();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if epoch > 0 && epoch == model.options.warmup_epochs {
            model.refit_decoder(data, &xs)?;
            adam = AdamState::default();
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for idx in epoch_batches(data.ncols(), cfg.batch_size, &mut shuffle) {
            let zb = gather_columns(data, &idx);
            let xb = gather_columns(&xs, &idx);
            let (loss, grads) = match keep_prob {
                Some(prob) => {
                    let kept = DMatrix::from_fn(m, idx.len(), |_, _| if mask_rng.random::<f64>() < prob { 1.0 } else { 0.0 });
                    let input = xb.component_mul(&kept) / prob;
                    let weights = kept.map(|b| 1.0 - b);
                    model.loss_and_grads_standardized(&input, &zb, Some(&weights))?
                }
                None => model.loss_and_grads_standardized(&xb, &zb, None)?,
            };
            check_finite(loss, epoch)?;
            let mut g = grads.encoder.tensors();
            g.push(grads.decoder.as_slice());
            let mut params = model.encoder.tensors_mut();
            params.push(model.decoder.as_mut_slice());
            adam_step(&mut params, &g, &mut adam, cfg)?;
            total += loss * idx.len() as f64;
            count += idx.len();
        }
        let mean = total / count as f64;
        check_finite(mean, epoch)?;
        if epoch % 100 == 0 {
            log::debug!("{} epoch {epoch}: loss {mean:.6e}", model.meta.kind);
        }
        history.push(mean);
    }
    model.meta.loss_history = history;
    model.meta.samples = data.ncols();
    Ok(())
}

pub fn train_pgae(
    data: &DMatrix<f64>,
    net: &Network,
    schema: &MeasurementSchema,
    spec: &LiftedBasisSpec,
    d: usize,
    cfg: &TrainConfig,
    options: PgAeOptions,
) -> Result<PgAeModel> {
    validate_inputs(data, net, schema, d, cfg)?;
    let mut model = PgAeModel::init(net, schema, spec.clone(), d, cfg, Standardizer::fit(data))?;
    model.channel_weights = options.weighting.weights(&model.standardizer);
    model.options = options;
    if let Some(last) = model.encoder.layers.last_mut() {
        last.w *= options.latent_init_scale;
        last.b *= options.latent_init_scale;
    }
    if options.block_decoder {
        model.decoder_pattern = Some(block_pattern(net, schema, spec));
    }
    fit(&mut model, data, cfg, None)?;
    Ok(model)
}

/// [`train_pgae`] with explicit per-channel loss weights.
#[allow(clippy::too_many_arguments)]
pub fn train_pgae_weighted(
    data: &DMatrix<f64>,
    net: &Network,
    schema: &MeasurementSchema,
    spec: &LiftedBasisSpec,
    d: usize,
    cfg: &TrainConfig,
    options: PgAeOptions,
    weights: &[f64],
) -> Result<PgAeModel> {
    validate_inputs(data, net, schema, d, cfg)?;
    if weights.len() != data.nrows() || weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::Config("loss weights must be finite, non-negative and one per channel".into()));
    }
    let mut model = PgAeModel::init(net, schema, spec.clone(), d, cfg, Standardizer::fit(data))?;
    model.channel_weights = weights.to_vec();
    model.options = options;
    if let Some(last) = model.encoder.layers.last_mut() {
        last.w *= options.latent_init_scale;
        last.b *= options.latent_init_scale;
    }
    if options.block_decoder {
        model.decoder_pattern = Some(block_pattern(net, schema, spec));
    }
    fit(&mut model, data, cfg, None)?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedTraining {
    pub model: PgAeModel,
    /// Mean squared reconstruction error per channel on the held-out tail,
    /// encoded with the full input.
    pub error_profile: Vec<f64>,
    pub holdout: usize,
}

/// Fraction of samples (taken from the end of the series) held out for the
/// per-channel error profile.
pub const MASK_HOLDOUT: f64 = 0.2;

pub fn train_masked_pgae(
    data: &DMatrix<f64>,
    net: &Network,
    schema: &MeasurementSchema,
    spec: &LiftedBasisSpec,
    d: usize,
    mask: MaskConfig,
    cfg: &TrainConfig,
    options: PgAeOptions,
) -> Result<MaskedTraining> {
    validate_inputs(data, net, schema, d, cfg)?;
    let m = data.nrows();
    if mask.keep_count == 0 || mask.keep_count > m {
        return Err(Error::Config(format!("mask keep count {} must lie in 1..={m}", mask.keep_count)));
    }
    let total = data.ncols();
    let holdout = ((total as f64 * MASK_HOLDOUT).ceil() as usize).min(total.saturating_sub(1));
    let train = data.columns(0, total - holdout).into_owned();
    let mut model = PgAeModel::init(net, schema, spec.clone(), d, cfg, Standardizer::fit(&train))?;
    model.channel_weights = options.weighting.weights(&model.standardizer);
    model.options = options;
    if let Some(last) = model.encoder.layers.last_mut() {
        last.w *= options.latent_init_scale;
        last.b *= options.latent_init_scale;
    }
    if options.block_decoder {
        model.decoder_pattern = Some(block_pattern(net, schema, spec));
    }
    model.mask = Some(mask);
    model.meta.kind = "masked-pgae".into();
    // with every channel kept the masked loss vanishes; train unmasked instead
    let keep = (mask.keep_count < m).then_some(mask.keep_count);
    fit(&mut model, &train, cfg, keep)?;

    let eval = if holdout > 0 { data.columns(total - holdout, holdout).into_owned() } else { train.clone() };
    let err = model.reconstruct(&eval)? - &eval;
    let error_profile = err.row_iter().map(|r| r.norm_squared() / eval.ncols() as f64).collect();
    Ok(MaskedTraining { model, error_profile, holdout })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis_spec, BasisMode};
    use crate::grid::bundled;
    use crate::powerflow::{measure, StateVector};

    fn toy_data(net: &Network, schema: &MeasurementSchema, count: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = StateVector::flat_start(net);
        let cols: Vec<_> = (0..count)
            .map(|_| {
                let mut s = base.clone();
                for i in 0..net.n() {
                    if i != net.slack() {
                        s.va[i] = rng.random_range(-0.1..0.1);
                        s.vm[i] += rng.random_range(-0.03..0.03);
                    }
                }
                measure(&s, net, schema).unwrap()
            })
            .collect();
        DMatrix::from_columns(&cols)
    }

    /// Central differences (step 1e-5) over encoder weights, a latent-layer
    /// bias and decoder entries, all through the basis lift.
    #[test]
    fn gradients_match_finite_differences_through_basis() {
        for (name, mode, d) in [("twobus", BasisMode::Sparse, 2), ("case14", BasisMode::Dense, 26), ("case14", BasisMode::Sparse, 7)] {
            let net = Network::new(bundled::load(name).unwrap()).unwrap();
            let schema = MeasurementSchema::default_schema(&net);
            let spec = build_basis_spec(&net, mode);
            let data = toy_data(&net, &schema, 6, 1);
            let cfg = TrainConfig { seed: 3, ..TrainConfig::default() };
            let mut model = PgAeModel::init(&net, &schema, spec, d, &cfg, Standardizer::fit(&data)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            model.decoder = DMatrix::from_fn(model.decoder.nrows(), model.decoder.ncols(), |_, _| rng.random_range(-1.0..1.0));
            let (_, grads) = model.loss_and_grads(&data).unwrap();
            let h = 1e-5;
            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-4);
            let loss = |m: &PgAeModel| m.loss(&data).unwrap();
            for l in 0..model.encoder.layers.len() {
                let len = model.encoder.layers[l].w.len();
                for _ in 0..15 {
                    let idx = rng.random_range(0..len);
                    let (mut a, mut b) = (model.clone(), model.clone());
                    a.encoder.layers[l].w.as_mut_slice()[idx] += h;
                    b.encoder.layers[l].w.as_mut_slice()[idx] -= h;
                    let fd = (loss(&a) - loss(&b)) / (2.0 * h);
                    let an = grads.encoder.layers[l].w.as_slice()[idx];
                    assert!(rel(an, fd) <= 1e-4, "{name} layer {l} w[{idx}]: {an} vs {fd}");
                }
            }
            let last = model.encoder.layers.len() - 1;
            for k in 0..d {
                let (mut a, mut b) = (model.clone(), model.clone());
                a.encoder.layers[last].b[k] += h;
                b.encoder.layers[last].b[k] -= h;
                let fd = (loss(&a) - loss(&b)) / (2.0 * h);
                assert!(rel(grads.encoder.layers[last].b[k], fd) <= 1e-4, "{name} latent bias {k}");
            }
            for _ in 0..20 {
                let idx = rng.random_range(0..model.decoder.len());
                let (mut a, mut b) = (model.clone(), model.clone());
                a.decoder.as_mut_slice()[idx] += h;
                b.decoder.as_mut_slice()[idx] -= h;
                let fd = (loss(&a) - loss(&b)) / (2.0 * h);
                assert!(rel(grads.decoder.as_slice()[idx], fd) <= 1e-4, "{name} decoder {idx}");
            }
        }
    }

    #[test]
    fn decoder_fit_reconstructs_constant_dataset() {
        let net = Network::new(bundled::load("case14").unwrap()).unwrap();
        let schema = MeasurementSchema::default_schema(&net);
        let spec = build_basis_spec(&net, BasisMode::Sparse);
        let one = toy_data(&net, &schema, 1, 2);
        let data = DMatrix::from_fn(one.nrows(), 20, |r, _| one[(r, 0)]);
        let cfg = TrainConfig { seed: 1, ..TrainConfig::default() };
        let st = Standardizer::fit(&data);
        let xs = st.apply(&data);
        let mut model = PgAeModel::init(&net, &schema, spec, 26, &cfg, st).unwrap();
        model.refit_decoder(&data, &xs).unwrap();
        assert!(model.loss(&data).unwrap() < 1e-10, "{}", model.loss(&data).unwrap());
    }

    #[test]
    fn decoder_is_linear() {
        let net = Network::new(bundled::load("case14").unwrap()).unwrap();
        let schema = MeasurementSchema::default_schema(&net);
        let spec = build_basis_spec(&net, BasisMode::Sparse);
        let data = toy_data(&net, &schema, 40, 3);
        let cfg = TrainConfig { epochs: 3, seed: 1, ..TrainConfig::default() };
        let model = train_pgae(&data, &net, &schema, &spec, 26, &cfg, PgAeOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w1 = DMatrix::from_fn(spec.p(), 1, |_, _| rng.random_range(-1.0..1.0));
        let w2 = DMatrix::from_fn(spec.p(), 1, |_, _| rng.random_range(-1.0..1.0));
        let (a, b) = (0.7, -1.3);
        let lhs = &model.decoder * (&w1 * a + &w2 * b);
        let rhs = (&model.decoder * &w1) * a + (&model.decoder * &w2) * b;
        assert!((lhs - rhs).amax() <= 1e-12);
    }

    #[test]
    fn training_is_seeded_and_reduces_loss() {
        let net = Network::new(bundled::load("case14").unwrap()).unwrap();
        let schema = MeasurementSchema::default_schema(&net);
        let spec = build_basis_spec(&net, BasisMode::Sparse);
        let data = toy_data(&net, &schema, 100, 4);
        let cfg = TrainConfig { epochs: 60, seed: 9, learning_rate: 1e-3, ..TrainConfig::default() };
        let opts = PgAeOptions { warmup_epochs: 20, ..PgAeOptions::default() };
        let a = train_pgae(&data, &net, &schema, &spec, 26, &cfg, opts).unwrap();
        let b = train_pgae(&data, &net, &schema, &spec, 26, &cfg, opts).unwrap();
        assert_eq!(a, b);
        let h = &a.meta.loss_history;
        assert!(h.last().unwrap() < &h[0], "{} -> {}", h[0], h.last().unwrap());
        let back = PgAeModel::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn masked_training_profile_and_bounds() {
        let net = Network::new(bundled::load("case14").unwrap()).unwrap();
        let schema = MeasurementSchema::p_injection_only(&net);
        let spec = build_basis_spec(&net, BasisMode::Sparse);
        let data = toy_data(&net, &schema, 50, 6);
        let cfg = TrainConfig { epochs: 4, seed: 2, ..TrainConfig::default() };
        let mask = MaskConfig { keep_count: 10, seed: 8 };
        let out = train_masked_pgae(&data, &net, &schema, &spec, 13, mask, &cfg, PgAeOptions::default()).unwrap();
        assert_eq!(out.error_profile.len(), 14);
        assert_eq!(out.holdout, 10);
        assert!(out.error_profile.iter().all(|e| *e >= 0.0));
        let full = MaskConfig { keep_count: 14, seed: 8 };
        assert!(train_masked_pgae(&data, &net, &schema, &spec, 13, full, &cfg, PgAeOptions::default()).is_ok());
        let bad = MaskConfig { keep_count: 15, seed: 8 };
        assert!(train_masked_pgae(&data, &net, &schema, &spec, 13, bad, &cfg, PgAeOptions::default()).is_err());
    }
}
