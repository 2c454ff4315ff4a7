//! `smoothwass` command line.

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use smoothwass::harness::{effective_parallelism, run_experiment, ExperimentConfig};
use smoothwass::inference::DEFAULT_B;
use smoothwass::{
    bootstrap_naive_null, bootstrap_one_sample_alt, bootstrap_one_sample_null, bootstrap_pooled_null,
    bootstrap_two_sample_alt, confidence_interval, equality_test, estimate_swd, fit_mde, plugin_variance, project_to_grid,
    sample, simulate_null_limit, verify_comparison, BootstrapDistribution, Boundary, DenseReference, DistributionSpec,
    Error, GridMeasure, GridSource, MdeOptions, NoiseCoupling, ParametricFamily, Sample, SeedPath, SmoothingConfig,
    VarianceMode,
};

const NAIVE_WARNING: &str = "warning: the naive two-sample bootstrap under the null is not consistent; \
its quantiles do not approximate the null law of the statistic. Use it only to exhibit that failure.";

#[derive(Parser)]
#[command(name = "smoothwass", version, about = "Smooth p-Wasserstein estimation and inference")]
struct Cli {
    /// Worker threads (further capped by SMOOTHWASS_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a sample from a distribution spec and write it as CSV.
    Sample(SampleArgs),
    /// Smooth distance between two samples, optionally with plug-in variance.
    Estimate(EstimateArgs),
    /// Bootstrap distribution as a one-column CSV.
    Bootstrap(BootstrapArgs),
    /// Basic bootstrap confidence interval for the smooth distance.
    Ci(CiArgs),
    /// Two-sample equality test with the pooled bootstrap.
    Test2(Test2Args),
    /// Grid simulation of the one-sample null limit.
    NullSim(NullSimArgs),
    /// Check W_p against the dual Sobolev bound on a grid.
    CompareSobolev(CompareArgs),
    /// Minimum smooth-distance estimation in a parametric family.
    Mde(MdeArgs),
    /// Monte Carlo experiments.
    Experiment {
        #[command(subcommand)]
        action: ExperimentAction,
    },
}

#[derive(Subcommand)]
enum ExperimentAction {
    /// Run an experiment config; flags override the file's keys.
    Run(RunArgs),
}

#[derive(Args)]
struct Smoothing {
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Noise copies per sample point.
    #[arg(long, default_value_t = 32)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl Smoothing {
    fn config(&self) -> Result<SmoothingConfig> {
        Ok(SmoothingConfig::new(self.p, self.sigma, self.m)?)
    }

    fn seed(&self, command: &str) -> SeedPath {
        SeedPath::root(self.seed).child(command)
    }
}

#[derive(Args)]
struct Pair {
    /// CSV of points for the first sample, one point per row.
    #[arg(long)]
    x: PathBuf,
    /// CSV of points for the second sample.
    #[arg(long)]
    y: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    /// Distribution spec: a JSON file or inline JSON.
    #[arg(long)]
    spec: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    OneSample,
    TwoSample,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    pair: Pair,
    #[command(flatten)]
    smoothing: Smoothing,
    /// Share one noise tensor between the samples (requires equal sizes).
    #[arg(long)]
    common_noise: bool,
    /// Also report the plug-in asymptotic variance.
    #[arg(long, value_enum)]
    variance: Option<Mode>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Scheme {
    OneSampleNull,
    OneSampleAlt,
    TwoSampleAlt,
    PooledNull,
}

#[derive(Args)]
struct BootstrapArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: Option<PathBuf>,
    #[arg(long, value_enum, required_unless_present = "naive_null")]
    scheme: Option<Scheme>,
    /// Independent resampling of both samples under the null (inconsistent).
    #[arg(long, conflicts_with = "scheme")]
    naive_null: bool,
    /// Known population for `one-sample-alt`, as a spec.
    #[arg(long)]
    reference: Option<String>,
    /// Dense sample size for the reference (default max(10n, 10^4)).
    #[arg(long)]
    reference_n: Option<usize>,
    /// Noise copies per point inside bootstrap replicates (defaults to --m).
    #[arg(long)]
    bootstrap_m: Option<usize>,
    #[arg(long = "b", default_value_t = DEFAULT_B)]
    b: usize,
    #[command(flatten)]
    smoothing: Smoothing,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CiArgs {
    #[command(flatten)]
    pair: Pair,
    #[command(flatten)]
    smoothing: Smoothing,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long = "b", default_value_t = DEFAULT_B)]
    b: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Test2Args {
    #[command(flatten)]
    pair: Pair,
    #[command(flatten)]
    smoothing: Smoothing,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long = "b", default_value_t = DEFAULT_B)]
    b: usize,
    /// Statistic computed with one noise tensor shared by both samples.
    #[arg(long)]
    common_noise: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    /// Lower corner, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    lower: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    upper: Vec<f64>,
    /// Nodes per axis, comma separated.
    #[arg(long, value_delimiter = ',')]
    nodes: Vec<usize>,
    #[arg(long, value_enum, default_value_t = BoundaryArg::ZeroFlux)]
    boundary: BoundaryArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundaryArg {
    ZeroFlux,
    Periodic,
}

impl GridArgs {
    fn build(&self) -> Result<smoothwass::Grid> {
        let boundary = match self.boundary {
            BoundaryArg::ZeroFlux => Boundary::ZeroFlux,
            BoundaryArg::Periodic => Boundary::Periodic,
        };
        Ok(smoothwass::Grid::from_box(&self.lower, &self.upper, &self.nodes, boundary)?)
    }
}

#[derive(Args)]
struct NullSimArgs {
    #[arg(long)]
    spec: String,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 2000)]
    n_surrogate: usize,
    #[arg(long, default_value_t = 400)]
    reps: usize,
    #[command(flatten)]
    smoothing: Smoothing,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    mu0: String,
    #[arg(long)]
    mu1: String,
    /// Reference density; defaults to the midpoint of the two.
    #[arg(long)]
    rho: Option<String>,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    /// Smoothing applied when projecting specs onto the grid.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MdeArgs {
    #[arg(long)]
    x: PathBuf,
    /// Parametric family JSON (file or inline).
    #[arg(long)]
    family: String,
    /// Model sample size (defaults to the data size).
    #[arg(long)]
    n_model: Option<usize>,
    #[arg(long, default_value_t = MdeOptions::default().xtol)]
    xtol: f64,
    #[arg(long, default_value_t = MdeOptions::default().ftol)]
    ftol: f64,
    #[arg(long, default_value_t = MdeOptions::default().max_evals)]
    max_evals: usize,
    #[arg(long, default_value_t = MdeOptions::default().starts)]
    starts: usize,
    #[command(flatten)]
    smoothing: Smoothing,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    #[arg(long)]
    master_seed: Option<u64>,
    /// Replication count.
    #[arg(long = "r")]
    replications: Option<usize>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override one params entry, `key=value` with a JSON value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// Input that is either inline JSON or a path to a JSON file.
fn json_text(arg: &str) -> Result<String> {
    if arg.trim_start().starts_with('{') {
        Ok(arg.to_string())
    } else {
        fs::read_to_string(arg).with_context(|| format!("reading {arg}"))
    }
}

fn load_spec(arg: &str) -> Result<DistributionSpec> {
    let spec = DistributionSpec::from_json(&json_text(arg)?)?;
    spec.validate()?;
    Ok(spec)
}

fn load_sample(path: &Path) -> Result<Sample> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Sample::read_csv(f)?)
}

fn output(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(File::create(path).with_context(|| format!("creating {}", path.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(value: &T, out: &Option<PathBuf>) -> Result<()> {
    let mut w = output(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

#[derive(Serialize)]
struct EstimateOutput {
    #[serde(flatten)]
    estimate: smoothwass::estimator::EstimateSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    variance: Option<smoothwass::VarianceEstimate>,
}

fn cmd_sample(a: &SampleArgs) -> Result<()> {
    let spec = load_spec(&a.spec)?;
    let s = sample(&spec, a.n, &SeedPath::root(a.seed).child("sample"))?;
    s.write_csv(output(&a.out)?)?;
    Ok(())
}

fn cmd_estimate(a: &EstimateArgs) -> Result<()> {
    let (x, y) = (load_sample(&a.pair.x)?, load_sample(&a.pair.y)?);
    let cfg = a.smoothing.config()?;
    let est = estimate_swd(&x, &y, &cfg, &a.smoothing.seed("estimate"), a.common_noise)?;
    let variance = match a.variance {
        None => None,
        Some(Mode::OneSample) => Some(plugin_variance(&est, VarianceMode::OneSample)?),
        Some(Mode::TwoSample) => Some(plugin_variance(&est, VarianceMode::TwoSample)?),
    };
    write_json(&EstimateOutput { estimate: est.summary(), variance }, &a.out)
}

fn cmd_bootstrap(a: &BootstrapArgs) -> Result<()> {
    let x = load_sample(&a.x)?;
    let y = a.y.as_deref().map(load_sample).transpose()?;
    let cfg = a.smoothing.config()?.with_m(a.bootstrap_m.unwrap_or(a.smoothing.m));
    let seed = a.smoothing.seed("bootstrap");
    let need_y = || y.as_ref().context("this scheme needs --y");
    let dist: BootstrapDistribution = if a.naive_null {
        eprintln!("{NAIVE_WARNING}");
        bootstrap_naive_null(&x, need_y()?, &cfg, a.b, &seed)?
    } else {
        match a.scheme.expect("clap requires a scheme") {
            Scheme::OneSampleNull => bootstrap_one_sample_null(&x, &cfg, a.b, &seed)?,
            Scheme::OneSampleAlt => {
                let spec = load_spec(a.reference.as_deref().context("one-sample-alt needs --reference")?)?;
                let size = a.reference_n.unwrap_or_else(|| DenseReference::default_size(x.n()));
                let dense_seed = seed.child("reference");
                let dense = DenseReference::new(
                    sample(&spec, size, &dense_seed)?,
                    cfg.sigma,
                    DenseReference::default_m(size),
                    &dense_seed,
                )?;
                bootstrap_one_sample_alt(&x, &dense, &cfg, a.b, &seed)?
            }
            Scheme::TwoSampleAlt => bootstrap_two_sample_alt(&x, need_y()?, &cfg, a.b, &seed)?,
            Scheme::PooledNull => bootstrap_pooled_null(&x, need_y()?, &cfg, a.b, &seed)?,
        }
    };
    dist.write_csv(output(&a.out)?)?;
    Ok(())
}

fn cmd_ci(a: &CiArgs) -> Result<()> {
    let (x, y) = (load_sample(&a.pair.x)?, load_sample(&a.pair.y)?);
    let cfg = a.smoothing.config()?;
    let interval = confidence_interval(&x, &y, &cfg, a.alpha, a.b, &a.smoothing.seed("ci"))?;
    write_json(&interval, &a.out)
}

fn cmd_test2(a: &Test2Args) -> Result<()> {
    let (x, y) = (load_sample(&a.pair.x)?, load_sample(&a.pair.y)?);
    let cfg = a.smoothing.config()?;
    let coupling = if a.common_noise { NoiseCoupling::Common } else { NoiseCoupling::Independent };
    let result = equality_test(&x, &y, &cfg, a.alpha, a.b, &a.smoothing.seed("test2"), coupling)?;
    write_json(&result, &a.out)
}

fn cmd_null_sim(a: &NullSimArgs) -> Result<()> {
    let spec = load_spec(&a.spec)?;
    let cfg = a.smoothing.config()?;
    let grid = a.grid.build()?;
    let draws = simulate_null_limit(&spec, &cfg, &grid, a.n_surrogate, a.reps, &a.smoothing.seed("null-sim"))?;
    let mut w = csv::Writer::from_writer(output(&a.out)?);
    w.write_record(["norm"])?;
    for v in draws {
        w.write_record([format!("{v}")])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_compare(a: &CompareArgs) -> Result<()> {
    let grid = a.grid.build()?;
    let project = |arg: &str| -> Result<GridMeasure> {
        Ok(project_to_grid(GridSource::Spec(&load_spec(arg)?), a.sigma, &grid)?)
    };
    let (mu0, mu1) = (project(&a.mu0)?, project(&a.mu1)?);
    let rho = match &a.rho {
        Some(arg) => project(arg)?,
        None => GridMeasure::normalized(
            grid.clone(),
            mu0.density.iter().zip(&mu1.density).map(|(u, v)| 0.5 * (u + v)).collect(),
        )?,
    };
    write_json(&verify_comparison(&rho, &mu0, &mu1, a.p)?, &a.out)
}

fn cmd_mde(a: &MdeArgs) -> Result<()> {
    let x = load_sample(&a.x)?;
    let family: ParametricFamily = serde_json::from_str(&json_text(&a.family)?).context("parsing family")?;
    family.validate()?;
    let cfg = a.smoothing.config()?;
    let opts = MdeOptions {
        xtol: a.xtol,
        ftol: a.ftol,
        max_evals: a.max_evals,
        starts: a.starts,
    };
    let n_model = a.n_model.unwrap_or(x.n());
    let result = fit_mde(&x, &family, &cfg, n_model, &opts, &a.smoothing.seed("mde"))?;
    write_json(&result, &a.out)
}

/// Outcome of `experiment run`, mapped to the process exit code.
enum RunStatus {
    Complete,
    Partial,
}

fn cmd_run(a: &RunArgs) -> Result<RunStatus> {
    let mut cfg = ExperimentConfig::read(&a.config)?;
    if let Some(s) = a.master_seed {
        cfg.master_seed = s;
    }
    if let Some(r) = a.replications {
        cfg.replications = r;
    }
    if let Some(par) = a.parallelism {
        cfg.parallelism = par;
    }
    if let Some(out) = &a.out {
        cfg.out = Some(out.clone());
    }
    for kv in &a.set {
        let (key, value) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {kv}"))?;
        let value = serde_json::from_str(value).unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
        match cfg.params.as_object_mut() {
            Some(map) => {
                map.insert(key.to_string(), value);
            }
            None => bail!(Error::Config("params must be a JSON object".into())),
        }
    }
    let report = run_experiment(&cfg)?;
    serde_json::to_writer_pretty(io::stdout().lock(), &report.summary)?;
    println!();
    for f in &report.failures {
        eprintln!("replicate {} failed: {}", f.replicate, f.error);
    }
    Ok(if report.is_partial() { RunStatus::Partial } else { RunStatus::Complete })
}

fn is_validation(err: &anyhow::Error) -> bool {
    match err.downcast_ref::<Error>() {
        Some(e) => matches!(
            e,
            Error::Config(_)
                | Error::Dimension(_)
                | Error::Size(_)
                | Error::Empty(_)
                | Error::Json(_)
                | Error::Parse(_)
                | Error::DegenerateNull(_)
                | Error::GridTooSmall { .. }
        ),
        None => err.downcast_ref::<serde_json::Error>().is_some(),
    }
}

fn is_broken_pipe(err: &anyhow::Error) -> bool {
    // writes to a closed stdout surface as io, csv or serde_json errors
    let kind = |c: &(dyn std::error::Error + 'static)| -> Option<io::ErrorKind> {
        if let Some(e) = c.downcast_ref::<io::Error>() {
            return Some(e.kind());
        }
        if let Some(e) = c.downcast_ref::<serde_json::Error>() {
            return e.io_error_kind();
        }
        if let Some(csv::ErrorKind::Io(e)) = c.downcast_ref::<csv::Error>().map(|e| e.kind()) {
            return Some(e.kind());
        }
        match c.downcast_ref::<Error>() {
            Some(Error::Io(e)) => Some(e.kind()),
            Some(Error::Json(e)) => e.io_error_kind(),
            Some(Error::Csv(e)) => match e.kind() {
                csv::ErrorKind::Io(e) => Some(e.kind()),
                _ => None,
            },
            _ => None,
        }
    };
    err.chain().any(|c| kind(c) == Some(io::ErrorKind::BrokenPipe))
}

fn dispatch(cli: &Cli) -> Result<RunStatus> {
    match &cli.command {
        Command::Sample(a) => cmd_sample(a)?,
        Command::Estimate(a) => cmd_estimate(a)?,
        Command::Bootstrap(a) => cmd_bootstrap(a)?,
        Command::Ci(a) => cmd_ci(a)?,
        Command::Test2(a) => cmd_test2(a)?,
        Command::NullSim(a) => cmd_null_sim(a)?,
        Command::CompareSobolev(a) => cmd_compare(a)?,
        Command::Mde(a) => cmd_mde(a)?,
        Command::Experiment {
            action: ExperimentAction::Run(a),
        } => return cmd_run(a),
    }
    Ok(RunStatus::Complete)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let requested = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    // experiment runs size their own pools; this one serves the other commands
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(effective_parallelism(requested))
        .build_global();
    match dispatch(&cli) {
        Ok(RunStatus::Complete) => ExitCode::SUCCESS,
        Ok(RunStatus::Partial) => {
            eprintln!("experiment finished with failed replicates; report marked partial");
            ExitCode::from(3)
        }
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_validation(&e) { 2 } else { 1 })
        }
    }
}
