//! Small dense feedforward networks with reverse-mode gradients and Adam.
//!
//! Batches are stored column-wise: an input batch is `in_dim x batch`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut DMatrix<f64>) {
        if self == Activation::Tanh {
            z.apply(|v| *v = v.tanh());
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { w: DMatrix::zeros(outputs, inputs), b: DVector::zeros(outputs) }
    }

    pub fn inputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.w.nrows()
    }
}

/// Layer stack: affine + activation on every hidden layer, affine output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpRepr", into = "MlpRepr")]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub hidden: Activation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerRepr {
    inputs: usize,
    outputs: usize,
    /// Row-major `outputs x inputs`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MlpRepr {
    dims: Vec<usize>,
    activation: Activation,
    layers: Vec<LayerRepr>,
}

impl From<MlpParams> for MlpRepr {
    fn from(p: MlpParams) -> Self {
        MlpRepr {
            dims: p.dims(),
            activation: p.hidden,
            layers: p
                .layers
                .iter()
                .map(|l| LayerRepr {
                    inputs: l.inputs(),
                    outputs: l.outputs(),
                    weights: l.w.transpose().as_slice().to_vec(),
                    bias: l.b.as_slice().to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<MlpRepr> for MlpParams {
    type Error = Error;
    fn try_from(r: MlpRepr) -> Result<Self> {
        let mut layers = Vec::with_capacity(r.layers.len());
        for l in r.layers {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Config("checkpoint layer has inconsistent sizes".into()));
            }
            layers.push(Layer {
                w: DMatrix::from_row_slice(l.outputs, l.inputs, &l.weights),
                b: DVector::from_vec(l.bias),
            });
        }
        let params = MlpParams { layers, hidden: r.activation };
        params.validate()?;
        if params.dims() != r.dims {
            return Err(Error::Config("checkpoint dims do not match its layers".into()));
        }
        Ok(params)
    }
}

impl MlpParams {
    /// Glorot-uniform weights, zero biases.
    pub fn glorot(dims: &[usize], hidden: Activation, rng: &mut ChaCha8Rng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("invalid layer dims {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    w: DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-limit..limit)),
                    b: DVector::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self { layers, hidden })
    }

    pub fn zeros(dims: &[usize], hidden: Activation) -> Self {
        Self { layers: dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(), hidden }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].inputs()];
        d.extend(self.layers.iter().map(Layer::outputs));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").outputs()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        for pair in self.layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Config("layer dimensions do not chain".into()));
            }
        }
        if self.layers.iter().any(|l| l.w.iter().chain(l.b.iter()).any(|v| !v.is_finite())) {
            return Err(Error::Config("network has non-finite parameters".into()));
        }
        Ok(())
    }

    /// Weight and bias buffers in a fixed order, for optimizers.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| [l.w.as_mut_slice(), l.b.as_mut_slice()]).collect()
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.w.as_slice(), l.b.as_slice()]).collect()
    }

    /// Output only, without keeping a cache.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(mlp_forward(self, x)?.0)
    }
}

/// Layer inputs saved by the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` is the input to layer `l`; the last entry is the output.
    pub activations: Vec<DMatrix<f64>>,
}

pub fn mlp_forward(params: &MlpParams, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, ForwardCache)> {
    if x.nrows() != params.input_dim() {
        return Err(Error::Dimension(format!("input has {} rows, network expects {}", x.nrows(), params.input_dim())));
    }
    let mut activations = Vec::with_capacity(params.layers.len() + 1);
    activations.push(x.clone());
    let last = params.layers.len() - 1;
    for (l, layer) in params.layers.iter().enumerate() {
        let mut z = &layer.w * activations.last().expect("seeded");
        for mut col in z.column_iter_mut() {
            col += &layer.b;
        }
        if l < last {
            params.hidden.apply(&mut z);
        }
        activations.push(z);
    }
    let out = activations.last().expect("nonempty").clone();
    Ok((out, ForwardCache { activations }))
}

/// Parameter gradients with the same shapes as [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Layer>,
}

impl MlpGrads {
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.w.as_slice(), l.b.as_slice()]).collect()
    }
}

/// Reverse pass: returns parameter gradients and the gradient with respect
/// to the input batch.
pub fn mlp_backward(params: &MlpParams, cache: &ForwardCache, grad_out: &DMatrix<f64>) -> (MlpGrads, DMatrix<f64>) {
    let count = params.layers.len();
    let mut grads: Vec<Layer> = Vec::with_capacity(count);
    let mut delta = grad_out.clone();
    for l in (0..count).rev() {
        let layer = &params.layers[l];
        if l < count - 1 && params.hidden == Activation::Tanh {
            // output of layer l is cache.activations[l + 1] = tanh(z)
            delta.zip_apply(&cache.activations[l + 1], |d, a| *d *= 1.0 - a * a);
        }
        let input = &cache.activations[l];
        let gw = &delta * input.transpose();
        let gb = delta.column_sum();
        let next = layer.w.transpose() * &delta;
        grads.push(Layer { w: gw, b: gb });
        delta = next;
    }
    grads.reverse();
    (MlpGrads { layers: grads }, delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Passes over the training set; each pass visits shuffled mini-batches.
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 2e-4, batch_size: 50, epochs: 1000, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.batch_size > 0
            && self.epochs > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training config {self:?}")))
        }
    }
}

/// Adam moments for a list of parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// One Adam update with bias correction.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
        return Err(Error::Dimension("parameter and gradient shapes differ".into()));
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.v = state.m.clone();
    } else if state.m.len() != params.len() || state.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
        return Err(Error::Dimension("optimizer state does not match parameters".into()));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for j in 0..p.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            p[j] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Shuffled mini-batch index lists for one epoch.
pub fn epoch_batches(count: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Gathers columns of `data` into a new matrix.
pub fn gather_columns(data: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(data.nrows(), idx.len(), |r, c| data[(r, idx[c])])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn loss(params: &MlpParams, x: &DMatrix<f64>, target: &DMatrix<f64>) -> f64 {
        0.5 * (params.predict(x).unwrap() - target).norm_squared()
    }

    /// Central differences with step 1e-5 against the reverse pass.
    fn check_gradients(dims: &[usize], seed: u64) {
        let mut r = rng(seed);
        let params = MlpParams::glorot(dims, Activation::Tanh, &mut r).unwrap();
        let x = DMatrix::from_fn(dims[0], 3, |_, _| r.random_range(-1.0..1.0));
        let target = DMatrix::from_fn(*dims.last().unwrap(), 3, |_, _| r.random_range(-1.0..1.0));
        let (out, cache) = mlp_forward(&params, &x).unwrap();
        let (grads, gx) = mlp_backward(&params, &cache, &(out - &target));
        let h = 1e-5;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
        for (l, layer) in grads.layers.iter().enumerate() {
            for idx in 0..layer.w.len() {
                let (mut p, mut q) = (params.clone(), params.clone());
                p.layers[l].w.as_mut_slice()[idx] += h;
                q.layers[l].w.as_mut_slice()[idx] -= h;
                let fd = (loss(&p, &x, &target) - loss(&q, &x, &target)) / (2.0 * h);
                assert!(rel(layer.w.as_slice()[idx], fd) <= 1e-4, "layer {l} w[{idx}]");
            }
            for idx in 0..layer.b.len() {
                let (mut p, mut q) = (params.clone(), params.clone());
                p.layers[l].b[idx] += h;
                q.layers[l].b[idx] -= h;
                let fd = (loss(&p, &x, &target) - loss(&q, &x, &target)) / (2.0 * h);
                assert!(rel(layer.b[idx], fd) <= 1e-4, "layer {l} b[{idx}]");
            }
        }
        for idx in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.as_mut_slice()[idx] += h;
            xm.as_mut_slice()[idx] -= h;
            let fd = (loss(&params, &xp, &target) - loss(&params, &xm, &target)) / (2.0 * h);
            assert!(rel(gx.as_slice()[idx], fd) <= 1e-4, "input {idx}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_gradients(&[4, 6, 3], 1);
        check_gradients(&[5, 7, 7, 7, 7, 2], 2);
        check_gradients(&[3, 2], 3);
    }

    #[test]
    fn zero_network_gives_zero_output() {
        let params = MlpParams::zeros(&[3, 5, 2], Activation::Tanh);
        let x = DMatrix::from_element(3, 4, 7.0);
        assert_eq!(params.predict(&x).unwrap(), DMatrix::zeros(2, 4));
    }

    #[test]
    fn single_layer_is_affine() {
        let mut params = MlpParams::zeros(&[2, 2], Activation::Tanh);
        params.layers[0].w = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        params.layers[0].b = DVector::from_vec(vec![0.5, -0.5]);
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        assert_eq!(params.predict(&x).unwrap().as_slice(), &[3.5, 6.5]);

        let (out, cache) = mlp_forward(&params, &x).unwrap();
        let g = DMatrix::from_column_slice(2, 1, &[1.0, -2.0]);
        let (grads, _) = mlp_backward(&params, &cache, &g);
        assert_eq!(grads.layers[0].w, &g * x.transpose());
        let (zero, _) = mlp_backward(&params, &cache, &(out * 0.0));
        assert!(zero.layers[0].w.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn tanh_hidden_activations_are_bounded() {
        let mut r = rng(4);
        let params = MlpParams::glorot(&[3, 8, 2], Activation::Tanh, &mut r).unwrap();
        let x = DMatrix::from_fn(3, 5, |_, _| 1e3 * r.random_range(-1.0..1.0));
        let (_, cache) = mlp_forward(&params, &x).unwrap();
        assert!(cache.activations[1].iter().all(|a| *a >= -1.0 && *a <= 1.0));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let params = MlpParams::zeros(&[3, 2], Activation::Tanh);
        assert!(params.predict(&DMatrix::zeros(4, 1)).is_err());
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let cfg = TrainConfig::default();
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![0.3, -40.0, 0.0];
        let mut state = AdamState::default();
        adam_step(&mut [p.as_mut_slice()], &[g.as_slice()], &mut state, &cfg).unwrap();
        // bias-corrected first step is lr * g / (|g| + eps)
        assert!((p[0] - (1.0 - 2e-4)).abs() < 1e-10);
        assert!((p[1] - (-2.0 + 2e-4)).abs() < 1e-10);
        assert_eq!(p[2], 0.5);
        let before = state.m[0][0];
        adam_step(&mut [p.as_mut_slice()], &[&[0.0, 0.0, 0.0][..]], &mut state, &cfg).unwrap();
        assert!((state.m[0][0] - 0.9 * before).abs() < 1e-15);
    }

    #[test]
    fn adam_reduces_loss_and_is_deterministic() {
        let run = || {
            let mut r = rng(7);
            let mut params = MlpParams::glorot(&[2, 8, 1], Activation::Tanh, &mut r).unwrap();
            let x: DMatrix<f64> = DMatrix::from_fn(2, 40, |_, _| r.random_range(-1.0..1.0));
            let y = DMatrix::from_fn(1, 40, |_, c| (x[(0, c)] * 2.0).sin() + x[(1, c)]);
            let cfg = TrainConfig { learning_rate: 1e-2, ..TrainConfig::default() };
            let mut state = AdamState::default();
            let first = loss(&params, &x, &y);
            for _ in 0..300 {
                let (out, cache) = mlp_forward(&params, &x).unwrap();
                let (g, _) = mlp_backward(&params, &cache, &(out - &y));
                let grads = g.tensors();
                adam_step(&mut params.tensors_mut(), &grads, &mut state, &cfg).unwrap();
            }
            (first, loss(&params, &x, &y), params)
        };
        let (first, last, a) = run();
        assert!(last < 0.1 * first, "{first} -> {last}");
        let (_, _, b) = run();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut r = rng(9);
        let params = MlpParams::glorot(&[5, 4, 3], Activation::Tanh, &mut r).unwrap();
        let text = serde_json::to_string(&params).unwrap();
        let back: MlpParams = serde_json::from_str(&text).unwrap();
        assert_eq!(back, params);
        let broken = text.replace("\"dims\":[5,4,3]", "\"dims\":[5,4,4]");
        assert!(serde_json::from_str::<MlpParams>(&broken).is_err());
    }
}
