use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Network;
use crate::powerflow::{measure, ChannelDerivatives, FreeStateLayout, MeasurementSchema, NoiseModel, StateVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WlsOptions {
    pub max_iterations: usize,
    /// Stop once the free-state update has ∞-norm at or below this.
    pub tolerance: f64,
}

impl Default for WlsOptions {
    fn default() -> Self {
        Self { max_iterations: 50, tolerance: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub state_hat: StateVector,
    /// Weighted objective `(z - h(x))' R^-1 (z - h(x))` at `state_hat`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Reusable WLS estimator for a fixed network, schema and noise model.
#[derive(Debug, Clone)]
pub struct Estimator<'a> {
    net: &'a Network,
    schema: &'a MeasurementSchema,
    sqrt_w: DVector<f64>,
    layout: FreeStateLayout,
    pub options: WlsOptions,
}

impl<'a> Estimator<'a> {
    pub fn new(net: &'a Network, schema: &'a MeasurementSchema, noise: &NoiseModel) -> Result<Self> {
        Self::with_layout(net, schema, noise, FreeStateLayout::new(net))
    }

    pub fn with_layout(
        net: &'a Network,
        schema: &'a MeasurementSchema,
        noise: &NoiseModel,
        layout: FreeStateLayout,
    ) -> Result<Self> {
        if layout.n != net.n() {
            return Err(Error::Dimension(format!("layout covers {} buses, network has {}", layout.n, net.n())));
        }
        if noise.len() != schema.len() {
            return Err(Error::Dimension(format!(
                "noise model has {} channels, schema has {}",
                noise.len(),
                schema.len()
            )));
        }
        if schema.len() < layout.dim() {
            return Err(Error::Unobservable(format!("{} channels for {} free states", schema.len(), layout.dim())));
        }
        let sqrt_w = DVector::from_iterator(noise.len(), noise.sigma.iter().map(|s| 1.0 / s));
        Ok(Self { net, schema, sqrt_w, layout, options: WlsOptions::default() })
    }

    pub fn layout(&self) -> &FreeStateLayout {
        &self.layout
    }

    /// Same estimator with the pinned magnitudes replaced.
    pub fn with_fixed_magnitudes(&self, vm: &[f64]) -> Result<Self> {
        if vm.len() != self.net.n() {
            return Err(Error::Dimension(format!("need {} magnitudes", self.net.n())));
        }
        let mut out = self.clone();
        out.layout.fixed_vm = vm.to_vec();
        Ok(out)
    }

    /// Flat angles with the layout's pinned magnitudes, or the case setpoints
    /// when magnitudes are free.
    pub fn flat_start(&self) -> StateVector {
        if self.layout.free_magnitudes {
            StateVector::flat_start(self.net)
        } else {
            StateVector { vm: self.layout.fixed_vm.clone(), va: vec![0.0; self.net.n()] }
        }
    }

    /// Degrees of freedom `m - s` of the residual objective.
    pub fn dof(&self) -> usize {
        self.schema.len() - self.layout.dim()
    }

    /// Whitened residual `R^-1/2 (z - h(x))`.
    fn whitened(&self, z: &DVector<f64>, state: &StateVector) -> Result<DVector<f64>> {
        let h = measure(state, self.net, self.schema)?;
        Ok((z - h).component_mul(&self.sqrt_w))
    }

    /// Whitened Jacobian, transposed (`s x m`).
    fn whitened_jacobian_t(&self, state: &StateVector) -> DMatrix<f64> {
        let n = self.net.n();
        let cols = self.layout.full_columns();
        let mut jt = DMatrix::zeros(self.layout.dim(), self.schema.len());
        let mut buf = vec![0.0; 2 * n];
        let deriv = ChannelDerivatives::new(self.net, state);
        for (j, &ch) in self.schema.channels().iter().enumerate() {
            deriv.fill(ch, &mut buf);
            let w = self.sqrt_w[j];
            let mut col = jt.column_mut(j);
            for (r, &c) in cols.iter().enumerate() {
                col[r] = buf[c] * w;
            }
        }
        jt
    }

    pub fn objective(&self, z: &DVector<f64>, state: &StateVector) -> Result<f64> {
        Ok(self.whitened(z, state)?.norm_squared())
    }

    /// Gauss–Newton from `init`, falling back to Levenberg damping whenever
    /// the plain step would increase the objective.
    pub fn estimate(&self, z: &DVector<f64>, init: &StateVector) -> Result<EstimationResult> {
        if z.len() != self.schema.len() {
            return Err(Error::Dimension(format!("z has {} entries, schema has {}", z.len(), self.schema.len())));
        }
        init.check(self.net.n())?;
        if init.vm.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Config("initial state must have positive magnitudes".into()));
        }
        let mut x = self.layout.to_free(init);
        let mut state = self.layout.to_state(&x);
        let mut r = self.whitened(z, &state)?;
        let mut obj = r.norm_squared();
        let mut converged = false;
        let mut iterations = 0;

        while iterations < self.options.max_iterations && obj.is_finite() {
            iterations += 1;
            let jt = self.whitened_jacobian_t(&state);
            let gain = &jt * jt.transpose();
            let grad = &jt * &r;

            let plain = gain.clone().cholesky().ok_or_else(|| Error::Unobservable("singular gain matrix".into()))?;
            let mut step = plain.solve(&grad);
            let mut cand_x = &x + &step;
            let mut cand_state = self.layout.to_state(&cand_x);
            let mut cand_r = self.whitened(z, &cand_state)?;
            let mut cand_obj = cand_r.norm_squared();

            if !(cand_obj <= obj) && step.amax() > self.options.tolerance {
                let diag = gain.diagonal();
                let mut lambda = 1e-3;
                let mut improved = false;
                for _ in 0..30 {
                    let mut damped = gain.clone();
                    for k in 0..damped.nrows() {
                        damped[(k, k)] += lambda * diag[k].max(1e-12);
                    }
                    if let Some(ch) = damped.cholesky() {
                        step = ch.solve(&grad);
                        cand_x = &x + &step;
                        cand_state = self.layout.to_state(&cand_x);
                        cand_r = self.whitened(z, &cand_state)?;
                        cand_obj = cand_r.norm_squared();
                        if cand_obj <= obj {
                            improved = true;
                            break;
                        }
                    }
                    lambda *= 10.0;
                }
                if !improved {
                    // stuck at a point no damped step improves on
                    converged = step.amax() <= self.options.tolerance;
                    break;
                }
            }

            let size = step.amax();
            x = cand_x;
            state = cand_state;
            r = cand_r;
            obj = cand_obj;
            if size <= self.options.tolerance {
                converged = true;
                break;
            }
        }
        log::trace!("wls: {iterations} iterations, objective {obj:.6e}, converged {converged}");
        Ok(EstimationResult { state_hat: state, residual: obj.max(0.0), iterations, converged: converged && obj.is_finite() })
    }

    /// Residual `r(z)`: best WLS objective over a flat start and, when given,
    /// a warm start.
    pub fn residual(&self, z: &DVector<f64>, warm: Option<&StateVector>) -> Result<EstimationResult> {
        let mut best = self.estimate(z, &self.flat_start())?;
        if let Some(w) = warm {
            let other = self.estimate(z, w)?;
            if other.residual < best.residual || !best.residual.is_finite() {
                best = other;
            }
        }
        Ok(best)
    }
}

pub fn wls_estimate(
    z: &DVector<f64>,
    noise: &NoiseModel,
    net: &Network,
    schema: &MeasurementSchema,
    init: &StateVector,
) -> Result<EstimationResult> {
    Estimator::new(net, schema, noise)?.estimate(z, init)
}

pub fn residual_error(z: &DVector<f64>, noise: &NoiseModel, net: &Network, schema: &MeasurementSchema) -> Result<f64> {
    Ok(Estimator::new(net, schema, noise)?.residual(z, None)?.residual)
}

/// Residuals for a time series. Samples are split into fixed-size blocks
/// processed on separate threads; inside a block each sample is warm-started
/// from the previous estimate. Results do not depend on the thread count.
pub fn residual_series(est: &Estimator<'_>, samples: &[DVector<f64>], block: usize) -> Result<Vec<EstimationResult>> {
    residual_series_each(est, samples, None, block).into_iter().collect()
}

/// Per-sample variant of [`residual_series`]: a failed estimate is reported
/// in place and does not stop the series. With `magnitudes`, sample `j` is
/// estimated with bus magnitudes pinned to `magnitudes[j]`.
pub fn residual_series_each(
    est: &Estimator<'_>,
    samples: &[DVector<f64>],
    magnitudes: Option<&[Vec<f64>]>,
    block: usize,
) -> Vec<Result<EstimationResult>> {
    if let Some(vm) = magnitudes {
        if vm.len() != samples.len() {
            let msg = format!("{} magnitude profiles for {} samples", vm.len(), samples.len());
            return samples.iter().map(|_| Err(Error::Dimension(msg.clone()))).collect();
        }
    }
    let block = block.max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(block)
            .enumerate()
            .map(|(b, chunk)| {
                scope.spawn(move || {
                    let mut out = Vec::with_capacity(chunk.len());
                    let mut warm: Option<StateVector> = None;
                    for (k, z) in chunk.iter().enumerate() {
                        let res = match magnitudes {
                            Some(vm) => est
                                .with_fixed_magnitudes(&vm[b * block + k])
                                .and_then(|e| e.residual(z, warm.as_ref())),
                            None => est.residual(z, warm.as_ref()),
                        };
                        if let Ok(r) = &res {
                            warm = Some(r.state_hat.clone());
                        }
                        out.push(res);
                    }
                    out
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("residual worker panicked")).collect()
    })
}

/// Default block length for [`residual_series`].
pub const SERIES_BLOCK: usize = 180;
