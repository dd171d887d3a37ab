//! Sensitivity sweeps: one trained model (or several) per replicate seed,
//! evaluated over a grid of values.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{generate_timeseries, Dataset, ScenarioConfig, SchemaChoice};
use crate::attack::{perturb_limited_series, perturb_series, select_critical_meters, AttackConfig, AttackScale, LimitedAttackPlan};
use crate::basis::{build_basis_spec, BasisMode};
use crate::detect::{empirical_quantile, reconstruction_errors, summarize_bypass, train_learned_detector, BypassReport, LearnedDetector};
use crate::detect::bdd_residuals;
use crate::error::{Error, Result};
use crate::estimation::{BddConfig, Estimator};
use crate::grid::Network;
use crate::models::{train_masked_pgae, train_pgae, train_standard_ae, Autoencoder, MaskConfig, PgAeOptions};
use crate::nn::TrainConfig;
use crate::powerflow::{FreeStateLayout, MeasurementSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Alpha,
    Gamma,
    LatentDim,
    DataVolume,
    MeterBudget,
    Connectivity,
}

impl SweepKind {
    pub const ALL: [SweepKind; 6] =
        [Self::Alpha, Self::Gamma, Self::LatentDim, Self::DataVolume, Self::MeterBudget, Self::Connectivity];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Alpha => "alpha",
            Self::Gamma => "gamma",
            Self::LatentDim => "latent_dim",
            Self::DataVolume => "data_volume",
            Self::MeterBudget => "meter_budget",
            Self::Connectivity => "connectivity",
        }
    }

    /// Grid used when none is given.
    pub fn default_grid(self) -> Vec<f64> {
        match self {
            Self::Alpha => vec![0.001, 0.01, 0.05, 0.1],
            Self::Gamma => vec![0.1, 0.5, 1.0, 2.0, 3.0],
            Self::LatentDim => vec![4.0, 13.0, 26.0, 40.0],
            Self::DataVolume => vec![144.0, 360.0, 720.0, 1440.0],
            Self::MeterBudget => vec![2.0, 6.0, 10.0, 14.0],
            Self::Connectivity => vec![0.0, 1.0],
        }
    }
}

impl fmt::Display for SweepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep kind `{s}`")))
    }
}

/// Model, attack and detector settings shared by every grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSettings {
    pub train: TrainConfig,
    /// Latent dimension; defaults to the number of free states.
    pub latent: Option<usize>,
    pub basis: BasisMode,
    pub pgae: PgAeOptions,
    /// Nominal entry of the latent offset `c`.
    pub attack_value: f64,
    pub attack_scale: AttackScale,
    pub gamma: f64,
    pub alpha: f64,
    /// Train the learned residual detector alongside the attack models.
    pub detector: bool,
    /// Also attack with a standard autoencoder in gamma sweeps.
    pub ablation: bool,
    /// Random meter sets averaged per budget in meter sweeps.
    pub random_sets: usize,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            latent: None,
            basis: BasisMode::Sparse,
            pgae: PgAeOptions::default(),
            attack_value: 0.1,
            attack_scale: AttackScale::Spread,
            gamma: 1.0,
            alpha: 0.05,
            detector: true,
            ablation: true,
            random_sets: 20,
        }
    }
}

impl ExperimentSettings {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidProbability(self.alpha));
        }
        if !self.attack_value.is_finite() || !self.gamma.is_finite() {
            return Err(Error::Config("attack value and gamma must be finite".into()));
        }
        if self.latent == Some(0) {
            return Err(Error::Config("latent dimension must be positive".into()));
        }
        Ok(())
    }

    fn latent_for(&self, net: &Network) -> usize {
        self.latent.unwrap_or_else(|| net.free_state_dim())
    }

    fn train_seeded(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.train }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub kind: SweepKind,
    pub grid: Vec<f64>,
    /// Replicate seeds; each seeds both the data and the training.
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub settings: ExperimentSettings,
}

impl SweepSpec {
    pub fn new(kind: SweepKind, grid: Vec<f64>, seeds: Vec<u64>) -> Self {
        Self { kind, grid, seeds, scenario: ScenarioConfig::default(), settings: ExperimentSettings::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("sweep needs at least one seed".into()));
        }
        self.scenario.validate()?;
        self.settings.validate()?;
        let integral = |v: f64| v.is_finite() && v >= 1.0 && v.fract() == 0.0;
        for &v in &self.grid {
            let ok = match self.kind {
                SweepKind::Alpha => v > 0.0 && v < 1.0,
                SweepKind::Gamma => v.is_finite(),
                SweepKind::LatentDim | SweepKind::DataVolume | SweepKind::MeterBudget => integral(v),
                SweepKind::Connectivity => v == 0.0 || v == 1.0,
            };
            if !ok {
                return Err(Error::Config(format!("grid value {v} is invalid for a {} sweep", self.kind)));
            }
        }
        Ok(())
    }
}

/// One result row. Every row carries what is needed to rerun its grid point
/// alone: the sweep kind and value, the seed and the scenario and training
/// settings echoed below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kind: SweepKind,
    pub value: f64,
    pub seed: u64,
    /// `pgae`, `ae`, `nominal`, `selected` or `random`.
    pub method: String,
    pub case: String,
    pub samples: usize,
    pub noise_percent: f64,
    pub schema_hash: String,
    pub basis: BasisMode,
    pub latent_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub attack_value: f64,
    pub attack_scale: AttackScale,
    pub gamma: f64,
    pub alpha: f64,
    /// Meters the attacker writes to (all channels unless limited).
    pub meters: usize,
    /// Mean squared reconstruction error per sample, p.u.^2.
    pub recon_error: Option<f64>,
    pub median_residual: f64,
    pub mean_residual: f64,
    pub succ_bdd: f64,
    pub succ_learn: Option<f64>,
    pub estimation_failures: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowTiming {
    pub row: usize,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub spec: SweepSpec,
    pub rows: Vec<SweepRow>,
    /// Wall-clock timings, kept apart from the rows so that result files are
    /// reproducible byte for byte.
    pub timings: Vec<RowTiming>,
}

impl SweepTable {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Rows with the given method, in table order.
    pub fn method<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a SweepRow> + 'a {
        self.rows.iter().filter(move |r| r.method == method)
    }
}

/// Mean squared reconstruction error per sample.
pub fn recon_error<A: Autoencoder + ?Sized>(model: &A, z: &DMatrix<f64>) -> Result<f64> {
    let e = reconstruction_errors(model, z)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

/// Evaluation context for one dataset.
struct Bench<'a> {
    est: Estimator<'a>,
    magnitudes: Option<Vec<Vec<f64>>>,
    detector: Option<LearnedDetector>,
    /// Detector errors on its calibration half, for re-thresholding.
    calibration: Vec<f64>,
}

impl<'a> Bench<'a> {
    fn new(
        data: &Dataset,
        net: &'a Network,
        schema: &'a MeasurementSchema,
        settings: &ExperimentSettings,
        seed: u64,
        angles_only: bool,
    ) -> Result<Self> {
        let noise = data.noise()?;
        let (est, magnitudes) = if angles_only {
            let vm = data
                .true_magnitudes()
                .ok_or_else(|| Error::Config("angles-only evaluation needs the true states".into()))?;
            let layout = FreeStateLayout::angles_only(net, vm[0].clone())?;
            (Estimator::with_layout(net, schema, &noise, layout)?, Some(vm))
        } else {
            (Estimator::new(net, schema, &noise)?, None)
        };
        let (detector, calibration) = if settings.detector {
            let d = settings.latent_for(net);
            let det = train_learned_detector(&data.z, net, schema, settings.alpha, d, &settings.train_seeded(seed))?;
            let half = det.train_samples;
            let cal = det.errors(&data.z.columns(half, data.len() - half).into_owned())?;
            (Some(det), cal)
        } else {
            (None, Vec::new())
        };
        Ok(Self { est, magnitudes, detector, calibration })
    }

    fn residuals(&self, z: &DMatrix<f64>) -> Vec<Option<f64>> {
        bdd_residuals(&self.est, z, self.magnitudes.as_deref())
    }

    fn learned_errors(&self, z: &DMatrix<f64>) -> Result<Option<Vec<f64>>> {
        self.detector.as_ref().map(|d| d.errors(z)).transpose()
    }

    fn summarize(&self, residuals: &[Option<f64>], errors: Option<&[f64]>, alpha: f64) -> Result<BypassReport> {
        let bdd = BddConfig::new(alpha, self.est.dof())?;
        let tau = match errors {
            Some(_) => Some(empirical_quantile(&self.calibration, 1.0 - alpha)?),
            None => None,
        };
        summarize_bypass(residuals.to_vec(), &bdd, errors.zip(tau))
    }

    fn report(&self, z: &DMatrix<f64>, alpha: f64) -> Result<BypassReport> {
        let r = self.residuals(z);
        let e = self.learned_errors(z)?;
        self.summarize(&r, e.as_deref(), alpha)
    }
}

/// Row template filled from the scenario and settings of one grid point.
fn template(spec: &SweepSpec, scenario: &ScenarioConfig, data: Option<&Dataset>, value: f64, seed: u64, latent: usize) -> SweepRow {
    let s = &spec.settings;
    SweepRow {
        kind: spec.kind,
        value,
        seed,
        method: "pgae".into(),
        case: scenario.case.clone(),
        samples: data.map_or(scenario.samples, |d| d.len()),
        noise_percent: scenario.noise_percent,
        schema_hash: data.map(|d| d.schema_hash.clone()).unwrap_or_default(),
        basis: s.basis,
        latent_dim: latent,
        epochs: s.train.epochs,
        learning_rate: s.train.learning_rate,
        batch_size: s.train.batch_size,
        attack_value: s.attack_value,
        attack_scale: s.attack_scale,
        gamma: s.gamma,
        alpha: s.alpha,
        meters: data.map_or(0, |d| d.labels.len()),
        recon_error: None,
        median_residual: f64::NAN,
        mean_residual: f64::NAN,
        succ_bdd: f64::NAN,
        succ_learn: None,
        estimation_failures: 0,
        error: None,
    }
}

fn fill(mut row: SweepRow, report: &BypassReport) -> SweepRow {
    row.alpha = report.alpha;
    row.median_residual = report.median_residual;
    row.mean_residual = report.mean_residual;
    row.succ_bdd = report.succ_bdd;
    row.succ_learn = report.succ_learn;
    row.estimation_failures = report.estimation_failures;
    row
}

/// Collects rows and their timings.
#[derive(Default)]
struct Sink {
    rows: Vec<SweepRow>,
    timings: Vec<RowTiming>,
}

impl Sink {
    fn push(&mut self, row: SweepRow, train_seconds: f64, eval_seconds: f64) {
        self.timings.push(RowTiming { row: self.rows.len(), train_seconds, eval_seconds });
        self.rows.push(row);
    }

    fn fail(&mut self, mut row: SweepRow, err: &Error) {
        log::warn!("{} sweep, value {}, seed {}: {err}", row.kind, row.value, row.seed);
        row.error = Some(err.to_string());
        self.push(row, 0.0, 0.0);
    }
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Runs every (value, seed) grid point of `spec`. Failures are recorded in
/// the affected rows and the sweep continues. Rows are ordered by seed, then
/// grid value, then method.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepTable> {
    spec.validate()?;
    let mut sink = Sink::default();
    for &seed in &spec.seeds {
        let mut scenario = spec.scenario.clone();
        scenario.seed = seed;
        if spec.kind == SweepKind::MeterBudget {
            scenario.schema = SchemaChoice::PInjection;
        }
        let outcome = match spec.kind {
            SweepKind::DataVolume => {
                for &v in &spec.grid {
                    let mut sc = scenario.clone();
                    sc.samples = v as usize;
                    if let Err(e) = shared_model_point(spec, &sc, seed, &[v], &mut sink) {
                        let latent = spec.settings.latent.unwrap_or(0);
                        sink.fail(template(spec, &sc, None, v, seed, latent), &e);
                    }
                }
                Ok(())
            }
            SweepKind::Alpha | SweepKind::Gamma => shared_model_point(spec, &scenario, seed, &spec.grid, &mut sink),
            SweepKind::LatentDim | SweepKind::Connectivity => per_model_points(spec, &scenario, seed, &mut sink),
            SweepKind::MeterBudget => meter_points(spec, &scenario, seed, &mut sink),
        };
        if let Err(e) = outcome {
            let latent = spec.settings.latent.unwrap_or(0);
            for &v in &spec.grid {
                sink.fail(template(spec, &scenario, None, v, seed, latent), &e);
            }
        }
    }
    Ok(SweepTable { spec: spec.clone(), rows: sink.rows, timings: sink.timings })
}

/// Alpha, gamma and data-volume points: one model per dataset, evaluated at
/// each value in `values`.
fn shared_model_point(spec: &SweepSpec, scenario: &ScenarioConfig, seed: u64, values: &[f64], sink: &mut Sink) -> Result<()> {
    let s = &spec.settings;
    let net = scenario.network()?;
    let data = generate_timeseries(scenario)?;
    let schema = scenario.schema.build(&net);
    let d = s.latent_for(&net);
    let basis = build_basis_spec(&net, s.basis);
    let cfg = s.train_seeded(seed);

    let t = Instant::now();
    let pgae = train_pgae(&data.z, &net, &schema, &basis, d, &cfg, s.pgae)?;
    let train_pgae_s = secs(t);
    let t = Instant::now();
    let ae = if spec.kind == SweepKind::Gamma && s.ablation {
        Some(train_standard_ae(&data.z, &net, &schema, d, &cfg)?)
    } else {
        None
    };
    let train_ae_s = secs(t);
    let t = Instant::now();
    let bench = Bench::new(&data, &net, &schema, s, seed, false)?;
    let train_det_s = secs(t);

    let pgae_recon = recon_error(&pgae, &data.z)?;
    let base = AttackConfig::build(&pgae, &data.z, s.attack_value, s.attack_scale)?;
    let ae_base = ae.as_ref().map(|m| AttackConfig::build(m, &data.z, s.attack_value, s.attack_scale)).transpose()?;
    let ae_recon = ae.as_ref().map(|m| recon_error(m, &data.z)).transpose()?;

    let t = Instant::now();
    let nominal_r = bench.residuals(&data.z);
    let nominal_e = bench.learned_errors(&data.z)?;
    let nominal_s = secs(t);

    match spec.kind {
        SweepKind::Alpha => {
            let t = Instant::now();
            let za = perturb_series(&pgae, &data.z, &base.clone().with_gamma(s.gamma))?;
            let r = bench.residuals(&za);
            let e = bench.learned_errors(&za)?;
            let attack_s = secs(t);
            for &alpha in values {
                let row = template(spec, scenario, Some(&data), alpha, seed, d);
                let mut a = fill(row.clone(), &bench.summarize(&r, e.as_deref(), alpha)?);
                a.recon_error = Some(pgae_recon);
                sink.push(a, train_pgae_s + train_det_s, attack_s);
                let mut n = fill(row, &bench.summarize(&nominal_r, nominal_e.as_deref(), alpha)?);
                n.method = "nominal".into();
                sink.push(n, train_det_s, nominal_s);
            }
        }
        _ => {
            for &v in values {
                let gamma = if spec.kind == SweepKind::Gamma { v } else { s.gamma };
                let mut row = template(spec, scenario, Some(&data), v, seed, d);
                row.gamma = gamma;
                let t = Instant::now();
                let za = perturb_series(&pgae, &data.z, &base.clone().with_gamma(gamma))?;
                let mut a = fill(row.clone(), &bench.report(&za, s.alpha)?);
                a.recon_error = Some(pgae_recon);
                sink.push(a, train_pgae_s + train_det_s, secs(t));
                if let (Some(ae), Some(ae_base)) = (&ae, &ae_base) {
                    let t = Instant::now();
                    let za = perturb_series(ae, &data.z, &ae_base.clone().with_gamma(gamma))?;
                    let mut a = fill(row.clone(), &bench.report(&za, s.alpha)?);
                    a.method = "ae".into();
                    a.recon_error = ae_recon;
                    sink.push(a, train_ae_s + train_det_s, secs(t));
                }
                if spec.kind == SweepKind::DataVolume {
                    let mut n = fill(row, &bench.summarize(&nominal_r, nominal_e.as_deref(), s.alpha)?);
                    n.method = "nominal".into();
                    sink.push(n, train_det_s, nominal_s);
                }
            }
            if spec.kind == SweepKind::Gamma {
                let mut n = fill(template(spec, scenario, Some(&data), 0.0, seed, d), &bench.summarize(&nominal_r, nominal_e.as_deref(), s.alpha)?);
                n.method = "nominal".into();
                n.gamma = 0.0;
                sink.push(n, train_det_s, nominal_s);
            }
        }
    }
    Ok(())
}

/// Latent-dimension and connectivity points: a fresh model per value.
fn per_model_points(spec: &SweepSpec, scenario: &ScenarioConfig, seed: u64, sink: &mut Sink) -> Result<()> {
    let s = &spec.settings;
    let net = scenario.network()?;
    let data = generate_timeseries(scenario)?;
    let schema = scenario.schema.build(&net);
    let cfg = s.train_seeded(seed);
    let no_detector = ExperimentSettings { detector: false, ..s.clone() };
    let bench = Bench::new(&data, &net, &schema, &no_detector, seed, false)?;

    let t = Instant::now();
    let nominal = bench.report(&data.z, s.alpha)?;
    let nominal_s = secs(t);
    let mut nominal_row = fill(template(spec, scenario, Some(&data), 0.0, seed, 0), &nominal);
    nominal_row.method = "nominal".into();
    nominal_row.gamma = 0.0;

    for &v in &spec.grid {
        let (d, mode) = match spec.kind {
            SweepKind::LatentDim => (v as usize, s.basis),
            _ => (s.latent_for(&net), if v == 0.0 { BasisMode::Dense } else { BasisMode::Sparse }),
        };
        let mut row = template(spec, scenario, Some(&data), v, seed, d);
        row.basis = mode;
        let point = || -> Result<(SweepRow, f64, f64)> {
            let basis = build_basis_spec(&net, mode);
            let t = Instant::now();
            let model = train_pgae(&data.z, &net, &schema, &basis, d, &cfg, s.pgae)?;
            let train_s = secs(t);
            let t = Instant::now();
            let c = AttackConfig::build(&model, &data.z, s.attack_value, s.attack_scale)?.with_gamma(s.gamma);
            let za = perturb_series(&model, &data.z, &c)?;
            let mut a = fill(row.clone(), &bench.report(&za, s.alpha)?);
            a.recon_error = Some(recon_error(&model, &data.z)?);
            Ok((a, train_s, secs(t)))
        };
        match point() {
            Ok((r, tr, ev)) => sink.push(r, tr, ev),
            Err(e) => sink.fail(row, &e),
        }
    }
    sink.push(nominal_row, 0.0, nominal_s);
    Ok(())
}

/// Meter-budget points: a masked model per budget `m0`, the attack limited
/// to its `m0` best-reconstructed channels, and random sets of the same size
/// as a baseline. The chi-squared test runs with bus magnitudes pinned to
/// their true values.
fn meter_points(spec: &SweepSpec, scenario: &ScenarioConfig, seed: u64, sink: &mut Sink) -> Result<()> {
    let s = &spec.settings;
    let net = scenario.network()?;
    let data = generate_timeseries(scenario)?;
    let schema = scenario.schema.build(&net);
    let m = schema.len();
    // bus magnitudes are pinned, so only the free angles remain
    let d = s.latent.unwrap_or(net.n() - 1);
    let basis = build_basis_spec(&net, s.basis);
    let cfg = s.train_seeded(seed);
    let no_detector = ExperimentSettings { detector: false, ..s.clone() };
    let bench = Bench::new(&data, &net, &schema, &no_detector, seed, true)?;

    for (gi, &v) in spec.grid.iter().enumerate() {
        let m0 = v as usize;
        let mut row = template(spec, scenario, Some(&data), v, seed, d);
        row.meters = m0;
        let mut point = || -> Result<()> {
            if m0 > m {
                return Err(Error::Config(format!("meter budget {m0} exceeds the {m} channels")));
            }
            let t = Instant::now();
            let trained = train_masked_pgae(&data.z, &net, &schema, &basis, d, MaskConfig { keep_count: m0, seed }, &cfg, s.pgae)?;
            let train_s = secs(t);
            let model = &trained.model;
            let c = AttackConfig::build(model, &data.z, s.attack_value, s.attack_scale)?.with_gamma(s.gamma);
            let recon = recon_error(model, &data.z)?;

            let t = Instant::now();
            let plan = select_critical_meters(&trained.error_profile, m0)?;
            let za = perturb_limited_series(model, &data.z, &c, &plan)?;
            let mut sel = fill(row.clone(), &bench.report(&za, s.alpha)?);
            sel.method = "selected".into();
            sel.recon_error = Some(recon);
            sink.push(sel, train_s, secs(t));

            let t = Instant::now();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1 + gi as u64);
            let mut reports = Vec::with_capacity(s.random_sets);
            for _ in 0..s.random_sets {
                let pick = rand::seq::index::sample(&mut rng, m, m0).into_vec();
                let plan = LimitedAttackPlan::new(pick, m)?;
                let za = perturb_limited_series(model, &data.z, &c, &plan)?;
                reports.push(bench.report(&za, s.alpha)?);
            }
            if !reports.is_empty() {
                let k = reports.len() as f64;
                let mut rnd = row.clone();
                rnd.method = "random".into();
                rnd.recon_error = Some(recon);
                rnd.succ_bdd = reports.iter().map(|r| r.succ_bdd).sum::<f64>() / k;
                rnd.median_residual = reports.iter().map(|r| r.median_residual).sum::<f64>() / k;
                rnd.mean_residual = reports.iter().map(|r| r.mean_residual).sum::<f64>() / k;
                rnd.estimation_failures = reports.iter().map(|r| r.estimation_failures).sum();
                sink.push(rnd, train_s, secs(t));
            }
            Ok(())
        };
        if let Err(e) = point() {
            sink.fail(row, &e);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in SweepKind::ALL {
            assert_eq!(k.as_str().parse::<SweepKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.as_str()));
            assert!(!k.default_grid().is_empty());
        }
        assert!("beta".parse::<SweepKind>().is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(SweepSpec::new(SweepKind::Gamma, vec![], vec![0]).validate().is_err());
        assert!(SweepSpec::new(SweepKind::Gamma, vec![1.0], vec![]).validate().is_err());
        assert!(SweepSpec::new(SweepKind::Alpha, vec![1.5], vec![0]).validate().is_err());
        assert!(SweepSpec::new(SweepKind::LatentDim, vec![2.5], vec![0]).validate().is_err());
        assert!(SweepSpec::new(SweepKind::Connectivity, vec![2.0], vec![0]).validate().is_err());
        assert!(SweepSpec::new(SweepKind::MeterBudget, vec![10.0], vec![0]).validate().is_ok());
        let json = serde_json::to_string(&SweepSpec::new(SweepKind::Gamma, vec![1.0], vec![3])).unwrap();
        let back: SweepSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back.seeds, vec![3]);
        let minimal: SweepSpec = serde_json::from_str(r#"{"kind":"alpha","grid":[0.05],"seeds":[1]}"#).unwrap();
        assert_eq!(minimal.settings, ExperimentSettings::default());
    }

    fn tiny(kind: SweepKind, grid: Vec<f64>) -> SweepSpec {
        let mut spec = SweepSpec::new(kind, grid, vec![5]);
        spec.scenario = ScenarioConfig { case: "twobus".into(), samples: 40, ..Default::default() };
        spec.settings.train = TrainConfig { epochs: 3, batch_size: 20, ..TrainConfig::default() };
        spec.settings.pgae.warmup_epochs = 1;
        spec
    }

    #[test]
    fn gamma_sweep_rows_and_determinism() {
        let spec = tiny(SweepKind::Gamma, vec![0.5, 1.0]);
        let a = run_sweep(&spec).unwrap();
        assert_eq!(a.method("pgae").count(), 2);
        assert_eq!(a.method("ae").count(), 2);
        assert_eq!(a.method("nominal").count(), 1);
        assert_eq!(a.rows.len(), a.timings.len());
        for r in &a.rows {
            assert!(r.error.is_none(), "{r:?}");
            assert!((0.0..=1.0).contains(&r.succ_bdd));
            assert!(r.succ_learn.is_some());
            assert_eq!(r.samples, 40);
        }
        let b = run_sweep(&spec).unwrap();
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn failing_point_is_recorded() {
        let mut spec = tiny(SweepKind::LatentDim, vec![1.0, 2.0]);
        spec.settings.train.learning_rate = 1e300;
        let t = run_sweep(&spec).unwrap();
        assert!(t.method("pgae").all(|r| r.error.is_some()));
        let mut spec = tiny(SweepKind::MeterBudget, vec![1.0, 9.0]);
        spec.settings.random_sets = 2;
        let t = run_sweep(&spec).unwrap();
        assert_eq!(t.method("selected").count(), 1);
        assert_eq!(t.method("random").count(), 1);
        assert!(t.rows.iter().any(|r| r.value == 9.0 && r.error.is_some()));
    }
}
