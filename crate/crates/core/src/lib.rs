//! Residual-based bad-data detection on AC measurement manifolds, and the
//! physics-guided autoencoder that produces manifold-aligned perturbations
//! able to evade it.

pub mod error;
pub mod grid;
pub mod powerflow;
pub mod estimation;
pub mod basis;
pub mod nn;
pub mod models;
pub mod attack;
pub mod detect;
pub mod harness;

pub use error::{Error, Result};

pub use attack::{perturb, perturb_series, AttackConfig, AttackScale, LimitedAttackPlan};
pub use basis::{build_basis_spec, BasisMode, LiftedBasisSpec};
pub use detect::{evaluate_bypass, BypassReport, LearnedDetector};
pub use estimation::{BddConfig, EstimationResult, Estimator};
pub use grid::{bundled, Network, NetworkCase};
pub use harness::{Dataset, ScenarioConfig, SweepKind, SweepSpec, SweepTable};
pub use models::{Autoencoder, PgAeModel, PgAeOptions, StandardAeModel};
pub use nn::TrainConfig;
pub use powerflow::{MeasurementSchema, MeasurementVector, NoiseModel, StateVector};
