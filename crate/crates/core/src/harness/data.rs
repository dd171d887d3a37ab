//! Synthetic measurement series from repeated AC power-flow solutions.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{bundled, Network};
use crate::powerflow::{measure, solve_powerflow, Dispatch, MeasurementSchema, NoiseModel, PowerFlowOptions, StateVector};

/// Minutes in the daily load profile.
pub const DAY_MINUTES: f64 = 1440.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaChoice {
    /// Injections, from-end flows and magnitudes.
    Default,
    /// Active injections only.
    PInjection,
}

impl SchemaChoice {
    pub fn build(self, net: &Network) -> MeasurementSchema {
        match self {
            Self::Default => MeasurementSchema::default_schema(net),
            Self::PInjection => MeasurementSchema::p_injection_only(net),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub case: String,
    pub samples: usize,
    /// Noise standard deviation in percent of each channel's scale.
    pub noise_percent: f64,
    /// Smallest channel scale in p.u. used for the noise level.
    pub noise_floor: f64,
    /// Daily profile `1 - amplitude * cos(2 pi t / 1440)`.
    pub profile_amplitude: f64,
    /// Range of the system-wide random scale `u_t`.
    pub scale_range: [f64; 2],
    /// Range of the independent per-bus load factors (separate draws for
    /// active and reactive load).
    pub bus_scale_range: [f64; 2],
    /// Range of the independent per-generator active-output factor, applied
    /// on top of the balancing ratio.
    pub gen_scale_range: [f64; 2],
    /// Half-width of the uniform jitter on generator voltage setpoints (p.u.).
    pub setpoint_jitter: f64,
    pub seed: u64,
    pub schema: SchemaChoice,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            case: "case14".into(),
            samples: 1440,
            noise_percent: 2.0,
            noise_floor: 0.1,
            profile_amplitude: 0.2,
            scale_range: [0.9, 1.1],
            bus_scale_range: [0.9, 1.1],
            gen_scale_range: [0.9, 1.1],
            setpoint_jitter: 0.0,
            seed: 0,
            schema: SchemaChoice::Default,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] > 0.0 && r[0] <= r[1];
        if self.samples == 0 {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        if !(self.noise_percent > 0.0 && self.noise_percent.is_finite()) {
            return Err(Error::Config(format!("noise percent must be positive, got {}", self.noise_percent)));
        }
        if !(self.noise_floor > 0.0) || !(0.0..1.0).contains(&self.profile_amplitude) {
            return Err(Error::Config("noise floor must be positive and profile amplitude in [0, 1)".into()));
        }
        if !range_ok(self.scale_range) || !range_ok(self.bus_scale_range) || !range_ok(self.gen_scale_range) {
            return Err(Error::Config("scale ranges must be positive and ordered".into()));
        }
        if !(self.setpoint_jitter >= 0.0 && self.setpoint_jitter < 0.2) {
            return Err(Error::Config("setpoint jitter must lie in [0, 0.2)".into()));
        }
        Ok(())
    }

    pub fn network(&self) -> Result<Network> {
        let case = match bundled::source(&self.case) {
            Some(_) => bundled::load(&self.case)?,
            None => {
                let text = fs::read_to_string(&self.case)?;
                crate::grid::parse_matpower_case(&text)?
            }
        };
        Network::new(case)
    }

    /// Time stamp in minutes of sample `k`; samples span one day.
    pub fn minute(&self, k: usize) -> f64 {
        k as f64 * DAY_MINUTES / self.samples as f64
    }

    pub fn base_profile(&self, minute: f64) -> f64 {
        1.0 - self.profile_amplitude * (2.0 * PI * minute / DAY_MINUTES).cos()
    }
}

/// Noisy measurements (`m x N`, one sample per column) with the true states
/// that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scenario: ScenarioConfig,
    pub labels: Vec<String>,
    pub schema_hash: String,
    /// Sample index of each column; skipped steps leave gaps.
    pub times: Vec<usize>,
    pub z: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub states: Option<Vec<StateVector>>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    scenario: ScenarioConfig,
    labels: Vec<String>,
    schema_hash: String,
    sigma: Vec<f64>,
    noise_rule: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    states: Option<Vec<StateVector>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    extra: Option<serde_json::Value>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.z.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.z.ncols() == 0
    }

    pub fn noise(&self) -> Result<NoiseModel> {
        NoiseModel::new(self.sigma.clone())
    }

    pub fn columns(&self) -> Vec<DVector<f64>> {
        self.z.column_iter().map(|c| c.into_owned()).collect()
    }

    /// Bus magnitudes of the true states, one vector per sample.
    pub fn true_magnitudes(&self) -> Option<Vec<Vec<f64>>> {
        self.states.as_ref().map(|s| s.iter().map(|x| x.vm.clone()).collect())
    }

    /// Columns `[start, start + len)` as a new dataset.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            times: self.times[start..start + len].to_vec(),
            z: self.z.columns(start, len).into_owned(),
            states: self.states.as_ref().map(|s| s[start..start + len].to_vec()),
            ..self.clone()
        }
    }

    /// Same metadata with other measurement values.
    pub fn with_values(&self, z: DMatrix<f64>) -> Result<Self> {
        if z.shape() != self.z.shape() {
            return Err(Error::Dimension("replacement values change the dataset shape".into()));
        }
        Ok(Self { z, ..self.clone() })
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (j, t) in self.times.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(self.z.column(j).iter().map(|v| format!("{v:e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `<path>` (CSV) and `<path>.json` (scenario, noise levels and
    /// true states). `extra` is stored verbatim in the sidecar.
    pub fn save(&self, path: &Path, extra: Option<serde_json::Value>) -> Result<()> {
        self.write_csv(fs::File::create(path)?)?;
        let side = Sidecar {
            scenario: self.scenario.clone(),
            labels: self.labels.clone(),
            schema_hash: self.schema_hash.clone(),
            sigma: self.sigma.clone(),
            noise_rule: format!(
                "sigma_i = {}% * max(mean_t |h_i|, {} p.u.)",
                self.scenario.noise_percent, self.scenario.noise_floor
            ),
            states: self.states.clone(),
            extra,
        };
        fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let side: Sidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
        let mut rdr = csv::Reader::from_path(path)?;
        let header = rdr.headers()?.clone();
        if header.get(0) != Some("t") || header.iter().skip(1).ne(side.labels.iter().map(String::as_str)) {
            return Err(Error::Config(format!("{} header does not match its sidecar", path.display())));
        }
        let m = side.labels.len();
        let mut times = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            times.push(rec[0].parse::<usize>().map_err(|e| Error::Config(format!("bad time stamp: {e}")))?);
            for v in rec.iter().skip(1) {
                values.push(v.parse::<f64>().map_err(|e| Error::Config(format!("bad value {v:?}: {e}")))?);
            }
        }
        if values.len() != m * times.len() {
            return Err(Error::Config(format!("{} has ragged rows", path.display())));
        }
        if let Some(s) = &side.states {
            if s.len() != times.len() {
                return Err(Error::Config("sidecar state count differs from the sample count".into()));
            }
        }
        Ok(Self {
            scenario: side.scenario,
            labels: side.labels,
            schema_hash: side.schema_hash,
            times: times.clone(),
            z: DMatrix::from_column_slice(m, times.len(), &values),
            sigma: side.sigma,
            states: side.states,
        })
    }

    /// Extra sidecar payload, if any.
    pub fn load_extra(path: &Path) -> Result<Option<serde_json::Value>> {
        let side: Sidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
        Ok(side.extra)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Random factors of one time step.
struct StepFactors {
    profile: f64,
    u: f64,
    p_bus: Vec<f64>,
    q_bus: Vec<f64>,
    gen: Vec<f64>,
    vset: Vec<f64>,
}

/// Loads and generation at one step: each load is scaled by the daily
/// profile times `u_t` times its own factors; generators follow the ratio of
/// total scaled load to total base load times their own factor. `damping`
/// pulls all factors towards 1.
fn scaled_dispatch(net: &Network, base: &Dispatch, k: &StepFactors, damping: f64) -> Dispatch {
    let case = &net.case;
    let shrink = |f: f64| 1.0 + damping * (f - 1.0);
    let mut p = vec![0.0; net.n()];
    let mut q = vec![0.0; net.n()];
    let (mut load0, mut load1) = (0.0, 0.0);
    for (i, b) in case.buses.iter().enumerate() {
        let fp = shrink(k.profile * k.u * k.p_bus[i]);
        let fq = shrink(k.profile * k.u * k.q_bus[i]);
        p[i] = -b.p_load * fp;
        q[i] = -b.q_load * fq;
        load0 += b.p_load;
        load1 += b.p_load * fp;
    }
    let ratio = if load0.abs() > 0.0 { load1 / load0 } else { 1.0 };
    for (g, gen) in case.gens.iter().enumerate().filter(|(_, g)| g.in_service) {
        p[gen.bus] += gen.pg * ratio * shrink(k.gen[g]);
        q[gen.bus] += gen.qg * ratio;
    }
    let mut vm = base.vm.clone();
    // the slack magnitude stays at its setpoint, as the estimator assumes
    for (g, gen) in case.gens.iter().enumerate().filter(|(_, g)| g.in_service && g.bus != net.slack()) {
        vm[gen.bus] = base.vm[gen.bus] + damping * k.vset[g];
    }
    Dispatch { p, q, vm }
}

/// Noise-free measurements and states for every step of the scenario.
pub fn generate_truth(config: &ScenarioConfig, net: &Network, schema: &MeasurementSchema) -> Result<(Vec<usize>, Vec<StateVector>, Vec<DVector<f64>>)> {
    config.validate()?;
    let base = Dispatch::from_case(net);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut times = Vec::with_capacity(config.samples);
    let mut states = Vec::with_capacity(config.samples);
    let mut truth = Vec::with_capacity(config.samples);
    let draw = |rng: &mut ChaCha8Rng, [a, b]: [f64; 2]| if b > a { rng.random_range(a..b) } else { a };
    let n_gen = net.case.gens.len();
    let jitter = config.setpoint_jitter;
    for k in 0..config.samples {
        let factors = StepFactors {
            profile: config.base_profile(config.minute(k)),
            u: draw(&mut rng, config.scale_range),
            p_bus: (0..net.n()).map(|_| draw(&mut rng, config.bus_scale_range)).collect(),
            q_bus: (0..net.n()).map(|_| draw(&mut rng, config.bus_scale_range)).collect(),
            gen: (0..n_gen).map(|_| draw(&mut rng, config.gen_scale_range)).collect(),
            vset: (0..n_gen).map(|_| if jitter > 0.0 { rng.random_range(-jitter..jitter) } else { 0.0 }).collect(),
        };
        let mut solved = None;
        for damping in [1.0, 0.5, 0.25] {
            let dispatch = scaled_dispatch(net, &base, &factors, damping);
            match solve_powerflow(net, &dispatch, PowerFlowOptions::default()) {
                Ok(s) => {
                    solved = Some(s);
                    break;
                }
                Err(e) => log::debug!("step {k}: power flow failed at damping {damping}: {e}"),
            }
        }
        match solved {
            Some(s) => {
                truth.push(measure(&s, net, schema)?);
                states.push(s);
                times.push(k);
            }
            None => log::warn!("step {k}: power flow did not converge; sample skipped"),
        }
    }
    if times.is_empty() {
        return Err(Error::PowerFlowDiverged(config.samples));
    }
    Ok((times, states, truth))
}

/// `sigma_i = noise% * max(mean_t |h_i|, floor)`.
pub fn noise_levels(config: &ScenarioConfig, truth: &[DVector<f64>]) -> Vec<f64> {
    let m = truth.first().map_or(0, |z| z.len());
    let n = truth.len().max(1) as f64;
    (0..m)
        .map(|i| {
            let scale = truth.iter().map(|z| z[i].abs()).sum::<f64>() / n;
            config.noise_percent / 100.0 * scale.max(config.noise_floor)
        })
        .collect()
}

pub fn generate_timeseries(config: &ScenarioConfig) -> Result<Dataset> {
    let net = config.network()?;
    let schema = config.schema.build(&net);
    let (times, states, truth) = generate_truth(config, &net, &schema)?;
    let sigma = noise_levels(config, &truth);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut z = DMatrix::zeros(schema.len(), truth.len());
    for (j, h) in truth.iter().enumerate() {
        for i in 0..h.len() {
            z[(i, j)] = h[i] + sigma[i] * std_normal.sample(&mut rng);
        }
    }
    Ok(Dataset {
        scenario: config.clone(),
        labels: schema.labels().to_vec(),
        schema_hash: schema.hash(),
        times,
        z,
        sigma,
        states: Some(states),
    })
}
