use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use gridmanifold_core::attack::{perturb_limited_series, perturb_series, select_critical_meters, AttackConfig, LimitedAttackPlan};
use gridmanifold_core::basis::{build_basis_spec, BasisMode};
use gridmanifold_core::detect::{evaluate_bypass, train_learned_detector, LearnedDetector};
use gridmanifold_core::estimation::{BddConfig, Estimator};
use gridmanifold_core::grid::{parse_matpower_case, Network};
use gridmanifold_core::harness::{emit_report, generate_timeseries, run_sweep, Dataset, ModelFile, ScenarioConfig, SchemaChoice, SweepKind, SweepSpec, SweepTable};
use gridmanifold_core::models::{train_masked_pgae, train_pgae, train_standard_ae, MaskConfig, PgAeOptions};
use gridmanifold_core::nn::TrainConfig;
use gridmanifold_core::powerflow::FreeStateLayout;

#[derive(Parser)]
#[command(name = "gridmanifold", version, about = "Measurement manifolds, residual detectors and manifold-aligned attacks on AC grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect MATPOWER case files.
    Case {
        #[command(subcommand)]
        action: CaseAction,
    },
    /// Synthetic measurement data.
    Data {
        #[command(subcommand)]
        action: DataAction,
    },
    /// Train an autoencoder on a dataset.
    Train(TrainArgs),
    /// Perturb a dataset along a trained model's manifold.
    Attack(AttackArgs),
    /// Run the chi-squared test (and optionally a learned detector) on a dataset.
    Detect(DetectArgs),
    /// Run a sensitivity sweep.
    Sweep(SweepArgs),
    /// Turn a sweep table into CSV, JSON and .dat files.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum CaseAction {
    /// Parse a case (file path or bundled name) and print it as JSON.
    Parse { file: String },
}

#[derive(Subcommand)]
enum DataAction {
    Gen(GenArgs),
}

#[derive(Args)]
struct GenArgs {
    /// JSON scenario config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    /// Noise standard deviation in percent.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    schema: Option<SchemaArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemaArg {
    Default,
    PInjection,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    Pgae,
    Ae,
    Masked,
    /// Standard autoencoder with a calibrated threshold.
    Detector,
}

#[derive(Clone, Copy, ValueEnum)]
enum BasisArg {
    Dense,
    Sparse,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Latent,
    Spread,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(value_enum)]
    kind: ModelKind,
    /// Bundled case name or MATPOWER file.
    #[arg(long)]
    case: String,
    #[arg(long)]
    data: PathBuf,
    /// Latent dimension; defaults to the number of free states.
    #[arg(long)]
    latent: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long, default_value_t = 2e-4)]
    lr: f64,
    #[arg(long, default_value_t = 50)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "sparse")]
    basis: BasisArg,
    /// Kept channels per sample for masked training.
    #[arg(long)]
    keep: Option<usize>,
    /// Significance level for the detector threshold.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Latent offset: one value for every coordinate, or a comma-separated list.
    #[arg(long, default_value = "0.1")]
    c: String,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Units of `c`.
    #[arg(long, value_enum, default_value = "spread")]
    scale: ScaleArg,
    /// Writable meters: a count (masked models pick their best channels) or
    /// a comma-separated list of channel indices.
    #[arg(long)]
    meters: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Detector model file (`train detector`).
    #[arg(long)]
    learned: Option<PathBuf>,
    /// Estimate angles only, with bus magnitudes pinned to the true values
    /// stored next to the data.
    #[arg(long)]
    angles_only: bool,
    /// Per-sample residuals and flags as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON sweep spec; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    kind: Option<String>,
    /// Comma-separated grid values.
    #[arg(long)]
    grid: Option<String>,
    /// Comma-separated replicate seeds.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Sweep table JSON; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Case { action: CaseAction::Parse { file } } => case_parse(&file),
        Command::Data { action: DataAction::Gen(args) } => data_gen(args),
        Command::Train(args) => train(args),
        Command::Attack(args) => attack(args),
        Command::Detect(args) => detect(args),
        Command::Sweep(args) => sweep(args),
        Command::Report { input, out } => {
            let table = SweepTable::from_json(&read(&input)?)?;
            for p in emit_report(&table, &out)? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_network(case: &str) -> Result<Network> {
    Ok(ScenarioConfig { case: case.to_string(), ..Default::default() }.network()?)
}

fn parse_list<T: std::str::FromStr>(text: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|e| anyhow::anyhow!("bad list entry {s:?}: {e}")))
        .collect()
}

fn case_parse(file: &str) -> Result<()> {
    let case = if Path::new(file).exists() {
        parse_matpower_case(&read(Path::new(file))?)?
    } else {
        gridmanifold_core::grid::bundled::load(file).with_context(|| format!("{file} is neither a file nor a bundled case"))?
    };
    let net = Network::new(case)?;
    println!("{}", net.case.to_canonical_json()?);
    eprintln!(
        "{}: {} buses, {} branches, {} generators, slack bus index {}",
        net.name(),
        net.n(),
        net.case.branches.len(),
        net.case.gens.len(),
        net.slack()
    );
    Ok(())
}

fn data_gen(args: GenArgs) -> Result<()> {
    let mut sc: ScenarioConfig = match &args.config {
        Some(p) => serde_json::from_str(&read(p)?)?,
        None => ScenarioConfig::default(),
    };
    if let Some(c) = args.case {
        sc.case = c;
    }
    if let Some(n) = args.n {
        sc.samples = n;
    }
    if let Some(v) = args.noise {
        sc.noise_percent = v;
    }
    if let Some(s) = args.seed {
        sc.seed = s;
    }
    if let Some(s) = args.schema {
        sc.schema = match s {
            SchemaArg::Default => SchemaChoice::Default,
            SchemaArg::PInjection => SchemaChoice::PInjection,
        };
    }
    let data = generate_timeseries(&sc)?;
    data.save(&args.out, None)?;
    eprintln!("{} samples x {} channels -> {}", data.len(), data.labels.len(), args.out.display());
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let net = load_network(&args.case)?;
    let data = Dataset::load(&args.data)?;
    let schema = data.scenario.schema.build(&net);
    ensure!(schema.hash() == data.schema_hash, "dataset channels do not match case {}", args.case);
    let d = args.latent.unwrap_or_else(|| net.free_state_dim());
    let cfg = TrainConfig { epochs: args.epochs, learning_rate: args.lr, batch_size: args.batch, seed: args.seed, ..Default::default() };
    let mode = match args.basis {
        BasisArg::Dense => BasisMode::Dense,
        BasisArg::Sparse => BasisMode::Sparse,
    };
    let file = match args.kind {
        ModelKind::Pgae => ModelFile::Pgae(train_pgae(&data.z, &net, &schema, &build_basis_spec(&net, mode), d, &cfg, PgAeOptions::default())?),
        ModelKind::Ae => ModelFile::Ae(train_standard_ae(&data.z, &net, &schema, d, &cfg)?),
        ModelKind::Masked => {
            let keep = args.keep.context("masked training needs --keep")?;
            let mask = MaskConfig { keep_count: keep, seed: args.seed };
            ModelFile::Masked(train_masked_pgae(&data.z, &net, &schema, &build_basis_spec(&net, mode), d, mask, &cfg, PgAeOptions::default())?)
        }
        ModelKind::Detector => ModelFile::Detector(train_learned_detector(&data.z, &net, &schema, args.alpha, d, &cfg)?),
    };
    file.save(&args.out)?;
    eprintln!("{} model, latent {d} -> {}", file.kind(), args.out.display());
    Ok(())
}

fn attack(args: AttackArgs) -> Result<()> {
    let file = ModelFile::load(&args.model)?;
    let data = Dataset::load(&args.data)?;
    ensure!(file.schema_hash() == data.schema_hash, "model and data use different channels");
    let model = file.autoencoder();
    let d = model.latent_dim();
    let values: Vec<f64> = parse_list(&args.c)?;
    let raw = match values.len() {
        1 => vec![values[0]; d],
        k if k == d => values,
        k => bail!("--c has {k} entries, the latent dimension is {d}"),
    };
    let c = match args.scale {
        ScaleArg::Latent => raw,
        ScaleArg::Spread => {
            let spread = gridmanifold_core::attack::latent_spread(model, &data.z)?;
            raw.iter().zip(&spread).map(|(v, s)| v * s).collect()
        }
    };
    let cfg = AttackConfig { c, gamma: args.gamma };
    let m = data.labels.len();
    let za = match &args.meters {
        None => perturb_series(model, &data.z, &cfg)?,
        Some(text) => {
            let plan = match (&file, text.contains(',')) {
                (ModelFile::Masked(t), false) => select_critical_meters(&t.error_profile, text.trim().parse()?)?,
                _ => LimitedAttackPlan::new(parse_list(text)?, m)?,
            };
            eprintln!("attacking channels {:?}", plan.channels());
            perturb_limited_series(model, &data.z, &cfg, &plan)?
        }
    };
    let extra = serde_json::json!({ "provenance": "attacked", "attack": { "model": args.model, "config": cfg, "meters": args.meters } });
    data.with_values(za)?.save(&args.out, Some(extra))?;
    eprintln!("attacked {} samples -> {}", data.len(), args.out.display());
    Ok(())
}

fn detect(args: DetectArgs) -> Result<()> {
    let data = Dataset::load(&args.data)?;
    let net = data.scenario.network()?;
    let schema = data.scenario.schema.build(&net);
    ensure!(schema.hash() == data.schema_hash, "dataset channels do not match its scenario");
    let noise = data.noise()?;
    let magnitudes = if args.angles_only {
        Some(data.true_magnitudes().context("angles-only detection needs the true states in the sidecar")?)
    } else {
        None
    };
    let est = match &magnitudes {
        Some(vm) => Estimator::with_layout(&net, &schema, &noise, FreeStateLayout::angles_only(&net, vm[0].clone())?)?,
        None => Estimator::new(&net, &schema, &noise)?,
    };
    let bdd = BddConfig::for_estimator(args.alpha, &est)?;
    let learned: Option<LearnedDetector> = match &args.learned {
        Some(p) => match ModelFile::load(p)? {
            ModelFile::Detector(d) => Some(d),
            other => bail!("{} holds a {} model, not a detector", p.display(), other.kind()),
        },
        None => None,
    };
    let report = evaluate_bypass(&data.z, &est, &bdd, magnitudes.as_deref(), learned.as_ref())?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(out) = &args.out {
        let mut w = csv::Writer::from_path(out)?;
        w.write_record(["t", "residual", "bdd_flag", "learned_error", "learned_flag"])?;
        for (j, r) in report.residuals.iter().enumerate() {
            let flag = r.map_or(true, |v| v >= bdd.tau);
            let (e, lf) = match (report.learned_errors.get(j), report.tau_learn) {
                (Some(e), Some(tau)) => (format!("{e:e}"), (*e > tau).to_string()),
                _ => (String::new(), String::new()),
            };
            w.write_record([data.times[j].to_string(), r.map_or_else(String::new, |v| format!("{v:e}")), flag.to_string(), e, lf])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut spec: SweepSpec = match &args.config {
        Some(p) => serde_json::from_str(&read(p)?)?,
        None => {
            let kind: SweepKind = args.kind.as_deref().context("--kind or --config is required")?.parse()?;
            SweepSpec::new(kind, kind.default_grid(), vec![0])
        }
    };
    if let Some(k) = &args.kind {
        let kind: SweepKind = k.parse()?;
        if kind != spec.kind {
            spec.kind = kind;
            spec.grid = kind.default_grid();
        }
    }
    if let Some(g) = &args.grid {
        spec.grid = parse_list(g)?;
    }
    if let Some(s) = &args.seeds {
        spec.seeds = parse_list(s)?;
    }
    if let Some(c) = args.case {
        spec.scenario.case = c;
    }
    if let Some(e) = args.epochs {
        spec.settings.train.epochs = e;
    }
    let table = run_sweep(&spec)?;
    let failed = table.rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} of {} rows failed", table.rows.len());
    }
    match &args.out {
        Some(p) => fs::write(p, table.to_json()?)?,
        None => println!("{}", table.to_json()?),
    }
    Ok(())
}

