//! AC measurement model: states, measurement schemas, the measurement
//! function and its Jacobian, and a Newton–Raphson power-flow solver.

mod measure;
mod newton;
mod schema;

pub use measure::{measure, measurement_jacobian, measurement_jacobian_full, ChannelDerivatives};
pub use newton::{solve_powerflow, Dispatch, PowerFlowOptions};
pub use schema::{Channel, MeasurementSchema};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Network;

/// Ordered real measurement values `z`, per-unit, in schema channel order.
pub type MeasurementVector = DVector<f64>;

/// Bus voltage magnitudes (p.u.) and angles (rad).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
}

impl StateVector {
    pub fn flat(n: usize) -> Self {
        Self { vm: vec![1.0; n], va: vec![0.0; n] }
    }

    /// Flat angles with regulated buses at their setpoints and 1.0 elsewhere.
    pub fn flat_start(net: &Network) -> Self {
        let vm = net
            .case
            .buses
            .iter()
            .map(|b| match b.kind {
                crate::grid::BusKind::Pq => 1.0,
                _ => b.v_setpoint,
            })
            .collect();
        Self { vm, va: vec![0.0; net.n()] }
    }

    pub fn len(&self) -> usize {
        self.vm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vm.is_empty()
    }

    pub fn check(&self, n: usize) -> Result<()> {
        if self.vm.len() != n || self.va.len() != n {
            return Err(Error::Dimension(format!(
                "state has {}/{} entries, network has {n} buses",
                self.vm.len(),
                self.va.len()
            )));
        }
        Ok(())
    }
}

/// Independent Gaussian measurement noise, `R = diag(sigma^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: Vec<f64>,
}

impl NoiseModel {
    pub fn new(sigma: Vec<f64>) -> Result<Self> {
        if let Some(bad) = sigma.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!("noise sigma must be positive, got {bad}")));
        }
        Ok(Self { sigma })
    }

    pub fn uniform(m: usize, sigma: f64) -> Result<Self> {
        Self::new(vec![sigma; m])
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    /// Diagonal of `R^-1`.
    pub fn weights(&self) -> Vec<f64> {
        self.sigma.iter().map(|s| 1.0 / (s * s)).collect()
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        Self { sigma: order.iter().map(|&j| self.sigma[j]).collect() }
    }
}

/// Mapping between a full [`StateVector`] and the free-state vector used by
/// estimation: angles at non-slack buses, then magnitudes at non-slack buses.
/// The slack angle is 0 and the slack magnitude is held at a fixed value.
///
/// An angles-only layout also holds every magnitude fixed, for schemas that
/// carry active-power information only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeStateLayout {
    pub n: usize,
    pub slack: usize,
    /// Magnitudes used for buses whose magnitude is not free.
    pub fixed_vm: Vec<f64>,
    pub free_magnitudes: bool,
}

impl FreeStateLayout {
    pub fn new(net: &Network) -> Self {
        let fixed_vm = net.case.buses.iter().map(|b| b.v_setpoint).collect();
        Self { n: net.n(), slack: net.slack(), fixed_vm, free_magnitudes: true }
    }

    /// Non-slack angles only; magnitudes are pinned to `vm`.
    pub fn angles_only(net: &Network, vm: Vec<f64>) -> Result<Self> {
        if vm.len() != net.n() || vm.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Dimension(format!("need {} positive magnitudes", net.n())));
        }
        Ok(Self { n: net.n(), slack: net.slack(), fixed_vm: vm, free_magnitudes: false })
    }

    pub fn slack_vm(&self) -> f64 {
        self.fixed_vm[self.slack]
    }

    pub fn dim(&self) -> usize {
        if self.free_magnitudes {
            2 * self.n - 2
        } else {
            self.n - 1
        }
    }

    /// Non-slack bus indices in ascending order.
    pub fn free_buses(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&i| i != self.slack)
    }

    pub fn to_free(&self, state: &StateVector) -> DVector<f64> {
        let mut x = DVector::zeros(self.dim());
        for (j, i) in self.free_buses().enumerate() {
            x[j] = state.va[i];
            if self.free_magnitudes {
                x[self.n - 1 + j] = state.vm[i];
            }
        }
        x
    }

    pub fn to_state(&self, x: &DVector<f64>) -> StateVector {
        let mut state = StateVector { vm: self.fixed_vm.clone(), va: vec![0.0; self.n] };
        for (j, i) in self.free_buses().enumerate() {
            state.va[i] = x[j];
            if self.free_magnitudes {
                state.vm[i] = x[self.n - 1 + j];
            }
        }
        state
    }

    /// Column of the full `[va | vm]` ordering (length `2n`) for each free coordinate.
    pub fn full_columns(&self) -> Vec<usize> {
        let angles = self.free_buses();
        let mags: Vec<usize> =
            if self.free_magnitudes { self.free_buses().map(|i| self.n + i).collect() } else { Vec::new() };
        angles.chain(mags).collect()
    }
}
