use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use diffloc::bench::{
    run_estimator, run_experiment, time_estimators, EstimateOutput, EstimatorSpec, ExperimentConfig, Problem, Settings,
};
use diffloc::bounds::{fim, peb, Dim};
use diffloc::est3d::{write_profile_csv, z_profile, InnerSolver, ZGrid};
use diffloc::geometry::{Target3D, Weights};
use diffloc::par::{with_threads, ExecutionMode};
use diffloc::scenario::{
    random_point_in, sample_scenario_set, synthesize_measurements, MeasurementSet, NoisePolicy, Scenario,
    ScenarioParams,
};
use diffloc::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "diffloc", version, about = "TOA localization with diffraction-aware path lengths")]
struct Cli {
    /// Worker threads for batch commands; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample anchors and targets and write them as scenario JSON.
    GenScenario(GenScenarioArgs),
    /// Run one estimator on one synthesized measurement set.
    Estimate(EstimateArgs),
    /// Write the approximate z-profile of one measurement set as CSV.
    Profile(ProfileArgs),
    /// Fisher information and position error bound for one target.
    Bounds(BoundsArgs),
    /// Monte Carlo RMSE experiment.
    Bench(BatchArgs),
    /// Monte Carlo experiment with median-of-repeats wall times.
    Time(BatchArgs),
}

#[derive(Args)]
struct GenScenarioArgs {
    /// JSON with any of `l`, `k`, `n_targets`, `seed`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    l: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n_targets: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Anchor set index within the seed.
    #[arg(long, default_value_t = 0)]
    set_index: u64,
}

#[derive(Args)]
struct Measurement {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    target_index: usize,
    #[arg(long, default_value_t = 20.0)]
    snr: f64,
    #[arg(long, default_value_t = NoisePolicy::DEFAULT_BANDWIDTH_HZ)]
    bandwidth: f64,
    /// Noise trial seed.
    #[arg(long, default_value_t = 0)]
    trial: u64,
    /// Use the true ranges; the SNR still sets the weights.
    #[arg(long)]
    noiseless: bool,
}

impl Measurement {
    fn load(&self) -> Result<(Scenario, MeasurementSet), Error> {
        let scenario = Scenario::load(&self.scenario)?;
        let policy = if self.noiseless {
            NoisePolicy::noiseless(self.snr, self.bandwidth)
        } else {
            NoisePolicy::new(self.snr, self.bandwidth)
        };
        let m = synthesize_measurements(&scenario, self.target_index, &policy, self.trial)?;
        Ok((scenario, m))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Gtrs2d,
    Usr2d,
    Sdr2d,
    SpselGtrs,
    SpselUsr,
    SpselSdr,
    Dnls,
    Msgn,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    measurement: Measurement,
    #[arg(long, value_enum)]
    method: Method,
    /// Known target height, required by the planar methods.
    #[arg(long)]
    z0: Option<f64>,
    /// Height grid size for sample-polish-select.
    #[arg(long, default_value_t = 8)]
    nz: usize,
    /// Gauss-Newton polish steps.
    #[arg(long, default_value_t = 5)]
    t: usize,
    /// Lattice points per axis for multi-start.
    #[arg(long, default_value_t = 3)]
    seeds_per_dim: usize,
    /// Plain Gauss-Newton without step-halving for the single-start baseline.
    #[arg(long)]
    no_halving: bool,
    /// Start point `x,y,z` of the single-start baseline; random by default.
    #[arg(long, value_delimiter = ',')]
    init: Option<Vec<f64>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Inner {
    Gtrs,
    Usr,
    Sdr,
}

#[derive(Args)]
struct ProfileArgs {
    #[command(flatten)]
    measurement: Measurement,
    #[arg(long, value_enum)]
    inner: Inner,
    #[arg(long, default_value_t = 8)]
    nz: usize,
    /// CSV destination; stdout by default.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    target_index: usize,
    #[arg(long, default_value_t = 20.0)]
    snr: f64,
    #[arg(long, default_value_t = NoisePolicy::DEFAULT_BANDWIDTH_HZ)]
    bandwidth: f64,
}

#[derive(Args)]
struct BatchArgs {
    #[arg(long)]
    config: PathBuf,
    /// CSV destination; overrides `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_anchor_sets: Option<usize>,
    #[arg(long)]
    n_targets: Option<usize>,
    #[arg(long)]
    n_noise: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    nz: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    snr: Option<Vec<f64>>,
    #[arg(long)]
    timing_repeats: Option<usize>,
    /// Run trials on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

impl BatchArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(&self.config)?)?;
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag.clone() { cfg.$field = v; })*
            };
        }
        set!(seed => seed, n_anchor_sets => n_anchor_sets, n_targets => n_targets, n_noise => n_noise, k => k,
             nz => n_z, t => t_gn, snr => snr_db, timing_repeats => timing_repeats);
        if let Some(out) = &self.out {
            cfg.output = Some(out.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct EstimateReport {
    method: String,
    target_index: usize,
    snr_db: f64,
    sigma_m: f64,
    truth: Target3D,
    point: Target3D,
    objective: f64,
    error_m: f64,
    result: EstimateOutput,
}

#[derive(Serialize)]
struct BoundsReport {
    target_index: usize,
    snr_db: f64,
    sigma_m: f64,
    peb_2d_m: f64,
    peb_3d_m: f64,
    fim_3d: Vec<Vec<f64>>,
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Lib(e.into())
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::InvalidParams(_) | Error::Parse(_) | Error::LengthMismatch { .. } | Error::TooFewAnchors { .. } => {
            EXIT_USAGE
        }
        _ => EXIT_NUMERICAL,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let threads = cli.threads;
    let outcome = with_threads(threads, move || dispatch(cli.command)).map_err(Failure::Lib).and_then(|r| r);
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::GenScenario(a) => gen_scenario(a),
        Command::Estimate(a) => estimate(a),
        Command::Profile(a) => profile(a),
        Command::Bounds(a) => bounds(a),
        Command::Bench(a) => batch(a, false),
        Command::Time(a) => batch(a, true),
    }
}

fn gen_scenario(a: GenScenarioArgs) -> Result<(), Failure> {
    let mut params = match &a.config {
        Some(path) => serde_json::from_str::<ScenarioParams>(&std::fs::read_to_string(path)?)?,
        None => ScenarioParams::default(),
    };
    params.l = a.l.unwrap_or(params.l);
    params.k = a.k.unwrap_or(params.k);
    params.n_targets = a.n_targets.unwrap_or(params.n_targets);
    params.seed = a.seed.unwrap_or(params.seed);
    let scenario = sample_scenario_set(&params, a.set_index)?;
    scenario.save(&a.out)?;
    println!("{}", a.out.display());
    Ok(())
}

fn estimate(a: EstimateArgs) -> Result<(), Failure> {
    let spec = match a.method {
        Method::Gtrs2d => EstimatorSpec::Gtrs2d,
        Method::Usr2d => EstimatorSpec::Usr2d,
        Method::Sdr2d => EstimatorSpec::Sdr2d,
        Method::SpselGtrs => EstimatorSpec::SpselGtrs { nz: Some(a.nz) },
        Method::SpselUsr => EstimatorSpec::SpselUsr { nz: Some(a.nz) },
        Method::SpselSdr => EstimatorSpec::SpselSdr { nz: Some(a.nz) },
        Method::Dnls => EstimatorSpec::Dnls { step_halving: !a.no_halving },
        Method::Msgn => EstimatorSpec::Msgn { seeds_per_dim: a.seeds_per_dim },
    };
    if spec.is_planar() && a.z0.is_none() {
        return Err(Failure::Usage(format!("--method {} needs --z0", spec.label(a.nz))));
    }
    let (scenario, m) = a.measurement.load()?;
    spec.validate(scenario.anchors.len(), a.nz)?;
    let init = match a.init.as_deref() {
        Some(&[x, y, z]) => Target3D::new(x, y, z),
        Some(_) => return Err(Failure::Usage("--init takes three comma-separated coordinates".into())),
        None => random_point_in(&scenario.building, scenario.seed, a.measurement.trial),
    };
    let settings = Settings::new(a.nz, a.t);
    let problem = Problem {
        anchors: &scenario.anchors,
        building: &scenario.building,
        ranges: &m.ranges,
        sigmas: &m.sigmas,
        known_z: a.z0,
        init,
    };
    let result = run_estimator(&spec, &settings, &problem)?;
    let truth = scenario.targets[a.measurement.target_index];
    let point = result.point();
    let report = EstimateReport {
        method: spec.label(a.nz),
        target_index: a.measurement.target_index,
        snr_db: a.measurement.snr,
        sigma_m: m.sigmas[0],
        truth,
        point,
        objective: result.objective(),
        error_m: point.distance(&truth),
        result,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn profile(a: ProfileArgs) -> Result<(), Failure> {
    let (scenario, m) = a.measurement.load()?;
    let inner = match a.inner {
        Inner::Gtrs => InnerSolver::gtrs(),
        Inner::Usr => InnerSolver::Usr,
        Inner::Sdr => InnerSolver::sdr(),
    };
    let grid = ZGrid::for_building(&scenario.building, a.nz)?;
    let weights = Weights::from_sigmas(&m.sigmas)?;
    let points = z_profile(&scenario.anchors, &weights, &m.ranges, &grid, &inner)?;
    match &a.out {
        Some(path) => {
            write_profile_csv(&points, std::fs::File::create(path)?)?;
            println!("{}", path.display());
        }
        None => write_profile_csv(&points, std::io::stdout().lock())?,
    }
    Ok(())
}

fn bounds(a: BoundsArgs) -> Result<(), Failure> {
    let scenario = Scenario::load(&a.scenario)?;
    let target = *scenario
        .targets
        .get(a.target_index)
        .ok_or_else(|| Failure::Usage(format!("target index {} out of range", a.target_index)))?;
    let policy = NoisePolicy::new(a.snr, a.bandwidth);
    let sigmas = policy.sigmas(scenario.anchors.len())?;
    let f3 = fim(&scenario.anchors, &sigmas, &target, Dim::Three)?;
    let f2 = fim(&scenario.anchors, &sigmas, &target, Dim::Two)?;
    let report = BoundsReport {
        target_index: a.target_index,
        snr_db: a.snr,
        sigma_m: policy.sigma(),
        peb_2d_m: peb(&f2)?.value,
        peb_3d_m: peb(&f3)?.value,
        fim_3d: f3.matrix.row_iter().map(|r| r.iter().copied().collect()).collect(),
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn batch(a: BatchArgs, timing: bool) -> Result<(), Failure> {
    let cfg = a.resolve()?;
    let csv_path = cfg.output.clone().unwrap_or_else(|| default_output(&a.config, timing));
    if csv_path.with_extension("json") == a.config {
        return Err(Failure::Usage(format!("output {} would overwrite the config", csv_path.display())));
    }
    let report = if timing {
        time_estimators(&cfg)?
    } else {
        let mode = if a.sequential { ExecutionMode::Sequential } else { ExecutionMode::Parallel };
        run_experiment(&cfg, mode)?
    };
    let sidecar = report.write(&csv_path)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", csv_path.display())?;
    writeln!(out, "{}", sidecar.display())?;
    Ok(())
}

fn default_output(config: &Path, timing: bool) -> PathBuf {
    let stem = config.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "experiment".into());
    let suffix = if timing { "_timing" } else { "_results" };
    config.with_file_name(format!("{stem}{suffix}.csv"))
}
