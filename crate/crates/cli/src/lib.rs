//! Command-line pipeline driver. Subcommands: `generate` (ground-truth
//! datasets), `train esn|hnn|lstm`, `evaluate`, `simulate` (single
//! trajectory to CSV/SVG) and `lyapunov`. Every run resolves its config
//! (JSON file, then flag overrides), executes, and leaves a reproducibility
//! record under `<out>/runs/`.

mod orbit_svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use tribody_core::dataset::{
    self, read_dataset, sample_initial, GenerateConfig, SamplerConfig,
};
use tribody_core::dynamics::Dim;
use tribody_core::esn;
use tribody_core::eval::{self, EvalConfig, ModelKind};
use tribody_core::fixtures;
use tribody_core::hnn;
use tribody_core::integrators::{
    converged_integrate, estimate_lyapunov, integrate, IntegratorConfig, LyapunovConfig, Method,
    Trajectory,
};
use tribody_core::lstm;
use tribody_core::SystemState;

/// Exit codes: 0 success, 1 runtime failure, 2 usage, 3 config.
pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

#[derive(Debug)]
enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "tribody",
    version,
    about = "Three-body trajectory lab: ground-truth generation, neural forecasting, horizon evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON config file for the chosen subcommand (flags override it)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Base random seed override
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Output directory root (dataset/, models/, reports/, runs/)
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    /// Worker threads for parallel stages (0 = all cores)
    #[arg(long, global = true, value_name = "N", default_value_t = 0)]
    workers: usize,

    /// Suppress progress output
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a certified ground-truth dataset
    Generate(GenerateArgs),
    /// Train a forecaster on a dataset or on the periodic fixture
    #[command(subcommand)]
    Train(TrainCommand),
    /// Evaluate a model against a dataset's test split
    Evaluate(EvaluateArgs),
    /// Integrate a single trajectory and write CSV + SVG
    Simulate(SimulateArgs),
    /// Estimate the maximal Lyapunov exponent of an initial condition
    Lyapunov(LyapunovArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Training trajectories
    #[arg(long, value_name = "N")]
    n_train: Option<usize>,
    /// Test trajectories
    #[arg(long, value_name = "N")]
    n_test: Option<usize>,
    /// Samples per trajectory
    #[arg(long, value_name = "N")]
    steps: Option<usize>,
    /// Spatial dimension (2 or 3)
    #[arg(long, value_name = "D")]
    dimension: Option<usize>,
    /// Rejection threshold on the initial pairwise separation
    #[arg(long, value_name = "R")]
    min_separation: Option<f64>,
    /// Sample interval of stored states
    #[arg(long, value_name = "DT")]
    dt_sample: Option<f64>,
    /// Bulirsch-Stoer certificate tolerance
    #[arg(long, value_name = "TOL")]
    tolerance: Option<f64>,
    /// Non-converged policy: resample or keep_flagged
    #[arg(long, value_name = "POLICY")]
    policy: Option<String>,
    /// Resampling budget per slot
    #[arg(long, value_name = "N")]
    retry_budget: Option<u32>,
}

#[derive(Subcommand, Debug)]
enum TrainCommand {
    /// Echo state network (ridge readout over a fixed reservoir)
    Esn(TrainEsnArgs),
    /// Hamiltonian neural network (symplectic-gradient matching)
    Hnn(TrainHnnArgs),
    /// LSTM baseline (next-state regression)
    Lstm(TrainLstmArgs),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Dataset manifest to train on
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    /// Train on a built-in fixture instead: figure8
    #[arg(long, value_name = "NAME")]
    fixture: Option<String>,
    /// Time span of the fixture trajectory
    #[arg(long, value_name = "T", default_value_t = 30.0)]
    fixture_span: f64,
    /// Where to write the model (default <out>/models/<kind>.json)
    #[arg(long, value_name = "PATH")]
    model_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainEsnArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Reservoir units [default: 300]
    #[arg(long, value_name = "N")]
    reservoir_size: Option<usize>,
    /// Nonzero probability of reservoir entries [default: 0.05]
    #[arg(long, value_name = "P")]
    density: Option<f64>,
    /// Target spectral radius [default: 0.9]
    #[arg(long, value_name = "RHO")]
    spectral_radius: Option<f64>,
    /// Input weight range [default: 0.5]
    #[arg(long, value_name = "S")]
    input_scale: Option<f64>,
    /// Ridge regularization [default: 1e-6]
    #[arg(long, value_name = "LAMBDA")]
    ridge_lambda: Option<f64>,
    /// Leading states discarded before the fit [default: 20]
    #[arg(long, value_name = "N")]
    washout: Option<usize>,
    /// Leak rate in (0, 1] [default: 1]
    #[arg(long, value_name = "ALPHA")]
    leak_rate: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainHnnArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Hidden layer widths, comma separated [default: 64,64]
    #[arg(long, value_name = "W,W,...")]
    hidden: Option<String>,
    /// Adam learning rate [default: 1e-3]
    #[arg(long, value_name = "LR")]
    learning_rate: Option<f64>,
    /// Pairs per minibatch [default: 128]
    #[arg(long, value_name = "N")]
    batch_size: Option<usize>,
    /// Training epochs [default: 2000]
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,
    /// squared or literal_norm
    #[arg(long, value_name = "MODE")]
    loss_mode: Option<String>,
}

#[derive(Args, Debug)]
struct TrainLstmArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Hidden units [default: 64]
    #[arg(long, value_name = "N")]
    hidden: Option<usize>,
    /// Adam learning rate [default: 1e-3]
    #[arg(long, value_name = "LR")]
    learning_rate: Option<f64>,
    /// Per-epoch learning-rate decay [default: 0.9995]
    #[arg(long, value_name = "F")]
    lr_decay: Option<f64>,
    /// Training epochs [default: 400]
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,
    /// Sequences per minibatch [default: 16]
    #[arg(long, value_name = "N")]
    batch_size: Option<usize>,
    /// Global gradient-norm clip [default: 1]
    #[arg(long, value_name = "C")]
    grad_clip: Option<f64>,
    /// Predict positions only (disables closed-loop rollout)
    #[arg(long)]
    positions_only: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// esn, hnn, lstm, oracle or constant
    #[arg(long, value_name = "KIND")]
    model_kind: ModelKind,
    /// Model file (required for esn/hnn/lstm)
    #[arg(long, value_name = "PATH")]
    model: Option<PathBuf>,
    /// Dataset manifest with the test split
    #[arg(long, value_name = "PATH")]
    manifest: PathBuf,
    /// Position-MAE accuracy bar [default: 0.1]
    #[arg(long, value_name = "THETA")]
    error_threshold: Option<f64>,
    /// Teacher-forced warmup states [default: 20]
    #[arg(long, value_name = "N")]
    warmup: Option<usize>,
    /// Field-rollout substeps per sample [default: 10]
    #[arg(long, value_name = "N")]
    rollout_substeps: Option<usize>,
    /// Bootstrap resample count [default: 1000]
    #[arg(long, value_name = "N")]
    bootstrap_resamples: Option<usize>,
    /// Benettin horizon for per-trajectory Lyapunov times
    #[arg(long, value_name = "T")]
    lyapunov_horizon: Option<f64>,
    /// Skip per-trajectory Lyapunov estimation
    #[arg(long)]
    no_lyapunov: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// figure8, circular or hierarchical
    #[arg(long, value_name = "NAME")]
    fixture: Option<String>,
    /// Draw the initial condition from the sampler instead
    #[arg(long, value_name = "INDEX")]
    sampler_index: Option<u64>,
    /// Integration span [default: one figure-8 period, otherwise 10]
    #[arg(long, value_name = "T")]
    t_end: Option<f64>,
    /// Sample interval [default: 0.1]
    #[arg(long, value_name = "DT")]
    dt_sample: Option<f64>,
    /// rk4, leapfrog or bulirsch_stoer [default: bulirsch_stoer]
    #[arg(long, value_name = "METHOD")]
    method: Option<String>,
    /// Fixed step for rk4/leapfrog [default: 1e-3]
    #[arg(long, value_name = "H")]
    step: Option<f64>,
    /// Bulirsch-Stoer local tolerance [default: 1e-10]
    #[arg(long, value_name = "TOL")]
    tolerance: Option<f64>,
    /// Run the two-tolerance convergence certificate
    #[arg(long)]
    certified: bool,
}

#[derive(Args, Debug)]
struct LyapunovArgs {
    /// figure8, circular or hierarchical
    #[arg(long, value_name = "NAME")]
    fixture: Option<String>,
    /// Draw the initial condition from the sampler instead
    #[arg(long, value_name = "INDEX")]
    sampler_index: Option<u64>,
    /// Initial shadow offset [default: 1e-8]
    #[arg(long, value_name = "D0")]
    delta0: Option<f64>,
    /// Renormalization interval [default: 1]
    #[arg(long, value_name = "TAU")]
    tau_renorm: Option<f64>,
    /// Total evolution span [default: 100]
    #[arg(long, value_name = "T")]
    horizon: Option<f64>,
    /// Regularity floor on the exponent [default: 1e-3]
    #[arg(long, value_name = "L")]
    lambda_floor: Option<f64>,
    /// Bulirsch-Stoer local tolerance [default: 1e-10]
    #[arg(long, value_name = "TOL")]
    tolerance: Option<f64>,
}

/// Parse and execute; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };

    let outcome = if cli.workers > 0 {
        match rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build()
        {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(CliError::Runtime(format!("worker pool: {e}"))),
        }
    } else {
        dispatch(&cli)
    };

    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let line = serde_json::json!({"error": e.message()});
            eprintln!("{line}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    for sub in ["dataset", "models", "reports", "runs"] {
        std::fs::create_dir_all(cli.out.join(sub))
            .map_err(|e| CliError::Runtime(format!("creating {}/{sub}: {e}", cli.out.display())))?;
    }
    match &cli.command {
        Command::Generate(args) => cmd_generate(cli, args),
        Command::Train(TrainCommand::Esn(args)) => cmd_train_esn(cli, args),
        Command::Train(TrainCommand::Hnn(args)) => cmd_train_hnn(cli, args),
        Command::Train(TrainCommand::Lstm(args)) => cmd_train_lstm(cli, args),
        Command::Evaluate(args) => cmd_evaluate(cli, args),
        Command::Simulate(args) => cmd_simulate(cli, args),
        Command::Lyapunov(args) => cmd_lyapunov(cli, args),
    }
}

/// Load the `--config` JSON into the subcommand's schema; missing file is
/// the schema default.
fn load_config<C: serde::de::DeserializeOwned + Default>(cli: &Cli) -> CliResult<C> {
    match &cli.config {
        None => Ok(C::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        }
    }
}

#[derive(Serialize)]
struct RunRecord<C: Serialize> {
    command: String,
    resolved_config: C,
    seed: Option<u64>,
    workers: usize,
    out_dir: String,
    crate_version: String,
    dataset_format_version: u32,
    report_version: u32,
    /// The only timestamp any run produces.
    timestamp_unix_secs: u64,
}

fn write_run_record<C: Serialize>(cli: &Cli, command: &str, config: &C) -> CliResult<PathBuf> {
    let record = RunRecord {
        command: command.to_string(),
        resolved_config: config,
        seed: cli.seed,
        workers: cli.workers,
        out_dir: cli.out.display().to_string(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        dataset_format_version: dataset::MANIFEST_VERSION,
        report_version: eval::REPORT_VERSION,
        timestamp_unix_secs: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let runs = cli.out.join("runs");
    for k in 0..100_000u32 {
        let path = runs.join(format!("{command}-{k:05}.json"));
        if !path.exists() {
            let json = serde_json::to_string_pretty(&record)
                .expect("run record serialization cannot fail");
            std::fs::write(&path, json)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            return Ok(path);
        }
    }
    Err(CliError::Runtime("runs/ directory is full".into()))
}

fn say(cli: &Cli, message: impl AsRef<str>) {
    if !cli.quiet {
        println!("{}", message.as_ref());
    }
}

fn cmd_generate(cli: &Cli, args: &GenerateArgs) -> CliResult<()> {
    let mut config: GenerateConfig = load_config(cli)?;
    if let Some(v) = args.n_train {
        config.n_train = v;
    }
    if let Some(v) = args.n_test {
        config.n_test = v;
    }
    if let Some(v) = args.steps {
        config.steps = v;
    }
    if let Some(v) = args.dimension {
        config.sampler.dim = match v {
            2 => Dim::Two,
            3 => Dim::Three,
            other => return Err(CliError::Config(format!("dimension must be 2 or 3, got {other}"))),
        };
    }
    if let Some(v) = args.min_separation {
        config.sampler.min_separation = v;
    }
    if let Some(v) = args.dt_sample {
        config.integrator.dt_sample = v;
    }
    if let Some(v) = args.tolerance {
        config.integrator.tolerance = v;
    }
    if let Some(v) = &args.policy {
        config.policy = serde_json::from_value(serde_json::json!(v))
            .map_err(|_| CliError::Config(format!("unknown policy {v:?}")))?;
    }
    if let Some(v) = args.retry_budget {
        config.retry_budget = v;
    }
    if let Some(seed) = cli.seed {
        config.sampler.base_seed = seed;
    }

    let record = write_run_record(cli, "generate", &config)?;
    let out_dir = cli.out.join("dataset");
    let manifest = dataset::generate_dataset(&config, &out_dir).map_err(runtime)?;
    let converged = manifest.trajectories.iter().filter(|t| t.converged).count();
    say(
        cli,
        format!(
            "generated {} train + {} test trajectories ({} certified converged) in {}",
            manifest.n_train,
            manifest.n_test,
            converged,
            out_dir.display()
        ),
    );
    say(cli, format!("run record: {}", record.display()));
    Ok(())
}

enum TrainingData {
    Dataset(Box<dataset::Dataset>),
    Fixture(Trajectory),
}

fn training_data(data: &DataArgs) -> CliResult<TrainingData> {
    match (&data.manifest, &data.fixture) {
        (Some(_), Some(_)) => Err(CliError::Config(
            "--manifest and --fixture are mutually exclusive".into(),
        )),
        (Some(manifest), None) => {
            let dataset = read_dataset(manifest).map_err(runtime)?;
            Ok(TrainingData::Dataset(Box::new(dataset)))
        }
        (None, fixture) => {
            let name = fixture.as_deref().unwrap_or("figure8");
            if name != "figure8" {
                return Err(CliError::Config(format!(
                    "unknown training fixture {name:?} (expected figure8)"
                )));
            }
            let state = fixtures::figure8();
            let config = IntegratorConfig {
                tolerance: 1e-10,
                ..Default::default()
            };
            let span = (data.fixture_span / config.dt_sample).round() * config.dt_sample;
            let traj = integrate(&state, state.time + span, &config).map_err(runtime)?;
            Ok(TrainingData::Fixture(traj))
        }
    }
}

fn flat_sequences(data: &TrainingData) -> Vec<Vec<Vec<f64>>> {
    let trajs: Vec<&Trajectory> = match data {
        TrainingData::Dataset(d) => d.train.iter().collect(),
        TrainingData::Fixture(t) => vec![t],
    };
    trajs
        .iter()
        .map(|t| t.states.iter().map(|s| s.to_flat()).collect())
        .collect()
}

fn model_path(cli: &Cli, data: &DataArgs, kind: &str) -> PathBuf {
    data.model_out
        .clone()
        .unwrap_or_else(|| cli.out.join("models").join(format!("{kind}.json")))
}

fn cmd_train_esn(cli: &Cli, args: &TrainEsnArgs) -> CliResult<()> {
    let mut config: esn::EsnConfig = load_config(cli)?;
    if let Some(v) = args.reservoir_size {
        config.reservoir_size = v;
    }
    if let Some(v) = args.density {
        config.density = v;
    }
    if let Some(v) = args.spectral_radius {
        config.spectral_radius = v;
    }
    if let Some(v) = args.input_scale {
        config.input_scale = v;
    }
    if let Some(v) = args.ridge_lambda {
        config.ridge_lambda = v;
    }
    if let Some(v) = args.washout {
        config.washout = v;
    }
    if let Some(v) = args.leak_rate {
        config.leak_rate = v;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }

    let record = write_run_record(cli, "train-esn", &config)?;
    let data = training_data(&args.data)?;
    let sequences: Vec<esn::EsnSequence> = flat_sequences(&data)
        .iter()
        .map(|states| esn::EsnSequence::next_state(states))
        .collect();
    let input_dim = sequences[0].inputs[0].len();

    let model = esn::init_reservoir(&config, input_dim).map_err(runtime)?;
    let trained = esn::fit_readout(&model, &sequences).map_err(runtime)?;
    let path = model_path(cli, &args.data, "esn");
    esn::save_model(&trained, &path).map_err(runtime)?;
    say(
        cli,
        format!(
            "esn trained on {} sequences, one-step MSE {:.3e}, rho {:.6} -> {}",
            sequences.len(),
            trained.train_mse.unwrap_or(f64::NAN),
            trained.achieved_rho,
            path.display()
        ),
    );
    say(cli, format!("run record: {}", record.display()));
    Ok(())
}

fn cmd_train_hnn(cli: &Cli, args: &TrainHnnArgs) -> CliResult<()> {
    let mut config: hnn::HnnConfig = load_config(cli)?;
    if let Some(v) = &args.hidden {
        config.hidden = v
            .split(',')
            .map(|w| w.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Config(format!("bad --hidden: {e}")))?;
    }
    if let Some(v) = args.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = &args.loss_mode {
        config.loss_mode = serde_json::from_value(serde_json::json!(v))
            .map_err(|_| CliError::Config(format!("unknown loss mode {v:?}")))?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }

    let record = write_run_record(cli, "train-hnn", &config)?;
    let data = training_data(&args.data)?;
    let trajs: Vec<&Trajectory> = match &data {
        TrainingData::Dataset(d) => d.train.iter().collect(),
        TrainingData::Fixture(t) => vec![t],
    };
    let mut pairs = Vec::new();
    for traj in trajs {
        pairs.extend(dataset::to_hnn_pairs(traj).map_err(runtime)?);
    }

    let model = hnn::train(&pairs, &config).map_err(runtime)?;
    let path = model_path(cli, &args.data, "hnn");
    hnn::save_model(&model, &path).map_err(runtime)?;
    say(
        cli,
        format!(
            "hnn trained on {} pairs, loss {:.3e} -> {:.3e}, saved to {}",
            pairs.len(),
            model.loss_history.first().copied().unwrap_or(f64::NAN),
            model.loss_history.last().copied().unwrap_or(f64::NAN),
            path.display()
        ),
    );
    say(cli, format!("run record: {}", record.display()));
    Ok(())
}

fn cmd_train_lstm(cli: &Cli, args: &TrainLstmArgs) -> CliResult<()> {
    let mut config: lstm::LstmConfig = load_config(cli)?;
    if let Some(v) = args.hidden {
        config.hidden = v;
    }
    if let Some(v) = args.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = args.lr_decay {
        config.lr_decay = v;
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.grad_clip {
        config.grad_clip = v;
    }
    if args.positions_only {
        config.positions_only = true;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }

    let record = write_run_record(cli, "train-lstm", &config)?;
    let data = training_data(&args.data)?;
    let sequences: Vec<lstm::LstmSequence> = flat_sequences(&data)
        .iter()
        .map(|states| lstm::LstmSequence::next_state(states, config.positions_only))
        .collect();

    let model = lstm::train(&sequences, &config).map_err(runtime)?;
    let path = model_path(cli, &args.data, "lstm");
    lstm::save_model(&model, &path).map_err(runtime)?;
    say(
        cli,
        format!(
            "lstm trained on {} sequences, loss {:.3e} -> {:.3e}, saved to {}",
            sequences.len(),
            model.loss_history.first().copied().unwrap_or(f64::NAN),
            model.loss_history.last().copied().unwrap_or(f64::NAN),
            path.display()
        ),
    );
    say(cli, format!("run record: {}", record.display()));
    Ok(())
}

fn cmd_evaluate(cli: &Cli, args: &EvaluateArgs) -> CliResult<()> {
    let mut config: EvalConfig = load_config(cli)?;
    if let Some(v) = args.error_threshold {
        config.error_threshold = v;
    }
    if let Some(v) = args.warmup {
        config.warmup = v;
    }
    if let Some(v) = args.rollout_substeps {
        config.rollout_substeps = v;
    }
    if let Some(v) = args.bootstrap_resamples {
        config.bootstrap_resamples = v;
    }
    if let Some(v) = args.lyapunov_horizon {
        let mut lyap = config.lyapunov.unwrap_or_default();
        lyap.horizon = v;
        config.lyapunov = Some(lyap);
    }
    if args.no_lyapunov {
        config.lyapunov = None;
    }
    if let Some(seed) = cli.seed {
        config.bootstrap_seed = seed;
    }

    let record = write_run_record(cli, "evaluate", &config)?;
    let report_dir = cli.out.join("reports").join(args.model_kind.name());
    let report = eval::evaluate_model(
        args.model_kind,
        args.model.as_deref(),
        &args.manifest,
        &config,
        &report_dir,
    )
    .map_err(runtime)?;
    let t = report.aggregate.tier_counts;
    say(
        cli,
        format!(
            "{}: mean horizon {:.3} tu, median {:.3} tu | tiers fail {} / t1 {} / t2 {} / t3 {}",
            args.model_kind.name(),
            report.aggregate.mean_horizon,
            report.aggregate.median_horizon,
            t[0],
            t[1],
            t[2],
            t[3]
        ),
    );
    for ci in &report.aggregate.horizon_cis {
        say(
            cli,
            format!(
                "  {:.0}% CI for the mean horizon: [{:.3}, {:.3}]",
                ci.level * 100.0,
                ci.low,
                ci.high
            ),
        );
    }
    say(cli, format!("report: {}", report_dir.join("report.json").display()));
    say(cli, format!("run record: {}", record.display()));
    Ok(())
}

/// Initial state from a named fixture or a sampler draw.
fn resolve_state(
    cli: &Cli,
    fixture: &Option<String>,
    sampler_index: &Option<u64>,
) -> CliResult<(String, SystemState)> {
    match (fixture, sampler_index) {
        (Some(_), Some(_)) => Err(CliError::Config(
            "--fixture and --sampler-index are mutually exclusive".into(),
        )),
        (None, Some(index)) => {
            let sampler = SamplerConfig {
                base_seed: cli.seed.unwrap_or(0),
                ..Default::default()
            };
            let state = sample_initial(&sampler, *index).map_err(runtime)?;
            Ok((format!("sample-{index}"), state))
        }
        (fixture, None) => {
            let name = fixture.as_deref().unwrap_or("figure8");
            let state = match name {
                "figure8" => fixtures::figure8(),
                "circular" => fixtures::circular_two_body(),
                "hierarchical" => fixtures::hierarchical_triple(),
                other => {
                    return Err(CliError::Config(format!(
                        "unknown fixture {other:?} (figure8, circular, hierarchical)"
                    )))
                }
            };
            Ok((name.to_string(), state))
        }
    }
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimulateConfig {
    integrator: IntegratorConfig,
    t_end: Option<f64>,
    certified: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            integrator: IntegratorConfig {
                tolerance: 1e-10,
                ..Default::default()
            },
            t_end: None,
            certified: false,
        }
    }
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> CliResult<()> {
    let mut config: SimulateConfig = load_config(cli)?;
    if let Some(v) = &args.method {
        config.integrator.method = match v.as_str() {
            "rk4" => Method::Rk4,
            "leapfrog" => Method::Leapfrog,
            "bulirsch_stoer" => Method::BulirschStoer,
            other => return Err(CliError::Config(format!("unknown method {other:?}"))),
        };
    }
    if let Some(v) = args.step {
        config.integrator.step = v;
    }
    if let Some(v) = args.tolerance {
        config.integrator.tolerance = v;
    }
    if let Some(v) = args.dt_sample {
        config.integrator.dt_sample = v;
    }
    if let Some(v) = args.t_end {
        config.t_end = Some(v);
    }
    if args.certified {
        config.certified = true;
    }

    let (name, state) = resolve_state(cli, &args.fixture, &args.sampler_index)?;
    // The figure-eight defaults to exactly one period so the output closes.
    let t_end = config.t_end.unwrap_or(match name.as_str() {
        "figure8" => fixtures::FIGURE8_PERIOD,
        _ => 10.0,
    });
    if args.dt_sample.is_none() && name == "figure8" && config.t_end.is_none() {
        config.integrator.dt_sample = fixtures::FIGURE8_PERIOD / 100.0;
    }

    let record = write_run_record(cli, "simulate", &config)?;
    let traj = if config.certified {
        converged_integrate(&state, state.time + t_end, &config.integrator).map_err(runtime)?
    } else {
        integrate(&state, state.time + t_end, &config.integrator).map_err(runtime)?
    };

    let csv_path = cli.out.join("reports").join(format!("sim-{name}.csv"));
    dataset::write_trajectory(&traj, &csv_path).map_err(runtime)?;
    let svg_path = cli.out.join("reports").join(format!("sim-{name}.svg"));
    std::fs::write(&svg_path, orbit_svg::trajectory_svg(&traj, &name))
        .map_err(|e| CliError::Runtime(format!("{}: {e}", svg_path.display())))?;
    say(
        cli,
        format!(
            "simulated {name} for {t_end} tu ({} samples) -> {}, {}",
            traj.len(),
            csv_path.display(),
            svg_path.display()
        ),
    );
    say(cli, format!("run record: {}", record.display()));
    Ok(())
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
struct LyapunovCmdConfig {
    integrator: IntegratorConfig,
    lyapunov: LyapunovConfig,
}

impl Default for LyapunovCmdConfig {
    fn default() -> Self {
        LyapunovCmdConfig {
            integrator: IntegratorConfig {
                tolerance: 1e-10,
                ..Default::default()
            },
            lyapunov: LyapunovConfig::default(),
        }
    }
}

fn cmd_lyapunov(cli: &Cli, args: &LyapunovArgs) -> CliResult<()> {
    let mut config: LyapunovCmdConfig = load_config(cli)?;
    if let Some(v) = args.delta0 {
        config.lyapunov.delta0 = v;
    }
    if let Some(v) = args.tau_renorm {
        config.lyapunov.tau_renorm = v;
    }
    if let Some(v) = args.horizon {
        config.lyapunov.horizon = v;
    }
    if let Some(v) = args.lambda_floor {
        config.lyapunov.lambda_floor = v;
    }
    if let Some(v) = args.tolerance {
        config.integrator.tolerance = v;
    }

    let (name, state) = resolve_state(cli, &args.fixture, &args.sampler_index)?;
    let record = write_run_record(cli, "lyapunov", &config)?;
    let estimate =
        estimate_lyapunov(&state, &config.integrator, &config.lyapunov).map_err(runtime)?;
    say(
        cli,
        format!(
            "{name}: lambda_max = {:.6}, t_lyap = {}",
            estimate.lambda_max,
            if estimate.t_lyap.is_finite() {
                format!("{:.3} tu", estimate.t_lyap)
            } else {
                "inf (regular at this floor)".to_string()
            }
        ),
    );
    let result_path = cli.out.join("reports").join(format!("lyapunov-{name}.json"));
    let payload = serde_json::json!({
        "initial_condition": name,
        "lambda_max": estimate.lambda_max,
        "t_lyap": if estimate.t_lyap.is_finite() { Some(estimate.t_lyap) } else { None },
        "config": &config,
    });
    std::fs::write(&result_path, serde_json::to_string_pretty(&payload).unwrap())
        .map_err(|e| CliError::Runtime(format!("{}: {e}", result_path.display())))?;
    say(cli, format!("result: {}", result_path.display()));
    say(cli, format!("run record: {}", record.display()));
    Ok(())
}
