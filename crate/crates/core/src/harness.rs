//! Reproducible Monte Carlo experiments: configuration, parallel replication,
//! summaries and persisted reports.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimator::{
    estimate_swd, estimate_value, estimate_vs_dense, plugin_variance, value_vs_dense, DenseReference, VarianceMode,
};
use crate::inference::{confidence_interval, equality_test, NoiseCoupling, DEFAULT_B};
use crate::mde::{mde_experiment, MdeExperimentKind, MdeOptions, ParametricFamily};
use crate::measures::{empirical, sample, DistributionSpec, SmoothingConfig};
use crate::quadrature::smooth_wasserstein_1d;
use crate::seed::SeedPath;
use crate::sobolev::{null_limit_draw, project_to_grid, Boundary, Grid, GridSource, MIN_SURROGATE};
use crate::stats::{compensated_sum, ks_vs_fitted_normal, lower_quantile, mean, sample_variance, sort_floats};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "SMOOTHWASS_THREADS";
pub const QUANTILE_LEVELS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];
pub const DEFAULT_REFERENCE_N: usize = 100_000;
pub const DEFAULT_REFERENCE_M: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: String,
    #[serde(default)]
    pub params: serde_json::Value,
    pub master_seed: u64,
    #[serde(rename = "R")]
    pub replications: usize,
    #[serde(default = "one")]
    pub parallelism: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// SHA-256 of the canonical JSON of everything that determines the rows:
    /// command, params, master seed and R. Object keys are sorted.
    pub fn hash(&self) -> String {
        let canonical = serde_json::json!({
            "command": self.command,
            "params": self.params,
            "master_seed": self.master_seed,
            "R": self.replications,
        });
        let digest = Sha256::digest(canonical.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("R must be at least 1".into()));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        Experiment::parse(self).map(|_| ())
    }
}

/// Thread count actually used: `requested`, capped by `SMOOTHWASS_THREADS`.
pub fn effective_parallelism(requested: usize) -> usize {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&c| c > 0);
    requested.min(cap.unwrap_or(usize::MAX)).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub replicate: usize,
    pub seed_path: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub replicate: usize,
    pub seed_path: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantilePoint {
    pub level: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub name: String,
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    pub quantiles: Vec<QuantilePoint>,
    /// KS distance to the normal law with the column's mean and variance.
    pub ks_normal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub columns: Vec<ColumnSummary>,
    pub covariance: Vec<Vec<f64>>,
}

impl Summary {
    pub fn from_rows(columns: &[String], rows: &[Row]) -> Summary {
        let data: Vec<Vec<f64>> = (0..columns.len())
            .map(|c| rows.iter().map(|r| r.values[c]).collect())
            .collect();
        let cols = columns
            .iter()
            .zip(&data)
            .map(|(name, v)| {
                let mut sorted = v.clone();
                sort_floats(&mut sorted);
                ColumnSummary {
                    name: name.clone(),
                    count: v.len(),
                    mean: mean(v),
                    variance: sample_variance(v),
                    quantiles: QUANTILE_LEVELS
                        .iter()
                        .map(|&level| QuantilePoint {
                            level,
                            value: lower_quantile(&sorted, level).unwrap_or(f64::NAN),
                        })
                        .collect(),
                    ks_normal: ks_vs_fitted_normal(v).ok(),
                }
            })
            .collect();
        let means: Vec<f64> = data.iter().map(|v| mean(v)).collect();
        let denom = rows.len().saturating_sub(1).max(1) as f64;
        let covariance = (0..data.len())
            .map(|a| {
                (0..data.len())
                    .map(|b| {
                        compensated_sum(data[a].iter().zip(&data[b]).map(|(x, y)| (x - means[a]) * (y - means[b]))) / denom
                    })
                    .collect()
            })
            .collect();
        Summary {
            columns: cols,
            covariance,
        }
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSummary> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub command: String,
    pub config_hash: String,
    pub version: String,
    pub master_seed: u64,
    pub replications: usize,
    pub parallelism: usize,
    pub wall_time_secs: f64,
    pub partial: bool,
    /// Frozen reference quantities the replicates were compared against.
    pub references: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub columns: Vec<String>,
    /// Successful replicates in replicate order; persisted as CSV.
    #[serde(skip)]
    pub rows: Vec<Row>,
    pub failures: Vec<Failure>,
    pub summary: Summary,
    pub metadata: Metadata,
}

impl ReplicationReport {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }

    /// Values of one column in replicate order.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.columns.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r.values[c]).collect())
    }

    /// Header `replicate,seed_path,<columns>`; floats in shortest round-trip
    /// form, independent of locale.
    pub fn write_rows_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["replicate".to_string(), "seed_path".to_string()];
        header.extend(self.columns.iter().cloned());
        out.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.replicate.to_string(), row.seed_path.clone()];
            rec.extend(row.values.iter().map(|v| format!("{v}")));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn rows_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_rows_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Writes `rows.csv` and `report.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.write_rows_csv(fs::File::create(dir.join("rows.csv"))?)?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Parse a rows CSV back into column names and rows.
pub fn read_rows_csv<R: Read>(r: R) -> Result<(Vec<String>, Vec<Row>)> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.len() < 2 || &header[0] != "replicate" || &header[1] != "seed_path" {
        return Err(Error::Parse("rows CSV must start with replicate,seed_path".into()));
    }
    let columns: Vec<String> = header.iter().skip(2).map(String::from).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s}: {e}")));
        rows.push(Row {
            replicate: rec[0].parse().map_err(|e| Error::Parse(format!("replicate id: {e}")))?,
            seed_path: rec[1].to_string(),
            values: rec.iter().skip(2).map(parse).collect::<Result<_>>()?,
        });
    }
    Ok((columns, rows))
}

/// Run `reps` replicates of `f` on `parallelism` threads. Replicate `r` gets
/// the seed `seed/rep/r`; rows come back in replicate order whatever the
/// thread count.
pub fn run_replications<F>(
    columns: Vec<String>,
    reps: usize,
    parallelism: usize,
    seed: &SeedPath,
    f: F,
) -> Result<ReplicationReport>
where
    F: Fn(usize, &SeedPath) -> Result<Vec<f64>> + Sync + Send,
{
    let threads = effective_parallelism(parallelism);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let start = Instant::now();
    let width = columns.len();
    let results: Vec<(usize, SeedPath, Result<Vec<f64>>)> = pool.install(|| {
        (0..reps)
            .into_par_iter()
            .map(|r| {
                let s = seed.child("rep").child(r);
                let out = f(r, &s).and_then(|v| {
                    if v.len() == width {
                        Ok(v)
                    } else {
                        Err(Error::Size(format!("replicate produced {} values for {width} columns", v.len())))
                    }
                });
                (r, s, out)
            })
            .collect()
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (replicate, s, out) in results {
        match out {
            Ok(values) => rows.push(Row {
                replicate,
                seed_path: s.to_string(),
                values,
            }),
            Err(e) => failures.push(Failure {
                replicate,
                seed_path: s.to_string(),
                error: e.to_string(),
            }),
        }
    }
    let summary = Summary::from_rows(&columns, &rows);
    Ok(ReplicationReport {
        metadata: Metadata {
            command: String::new(),
            config_hash: String::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed: seed.master,
            replications: reps,
            parallelism: threads,
            wall_time_secs: start.elapsed().as_secs_f64(),
            partial: !failures.is_empty(),
            references: BTreeMap::new(),
        },
        columns,
        rows,
        failures,
        summary,
    })
}

fn default_m() -> usize {
    SmoothingConfig::DEFAULT_M
}

fn default_b() -> usize {
    DEFAULT_B
}

fn default_reference_n() -> usize {
    DEFAULT_REFERENCE_N
}

fn default_reference_m() -> usize {
    DEFAULT_REFERENCE_M
}

fn default_true() -> bool {
    true
}

fn default_boundary() -> Boundary {
    Boundary::ZeroFlux
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NullMcParams {
    pub spec: DistributionSpec,
    pub n: usize,
    pub p: f64,
    pub sigma: f64,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub dense_n: Option<usize>,
    #[serde(default)]
    pub dense_m: Option<usize>,
    #[serde(default)]
    pub method: NullMcMethod,
}

/// How `null_mc` evaluates each smooth distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullMcMethod {
    /// Noise augmentation with `m` copies against the augmented dense reference.
    #[default]
    Augmented,
    /// Exact Gaussian-mixture quantiles on the line (d = 1 only); `m` and
    /// `dense_m` are unused.
    Quadrature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoSampleNullParams {
    pub spec: DistributionSpec,
    pub n: usize,
    pub p: f64,
    pub sigma: f64,
    #[serde(default = "default_m")]
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AltCltParams {
    pub mu: DistributionSpec,
    pub nu: DistributionSpec,
    pub n: usize,
    pub p: f64,
    pub sigma: f64,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "one_sample")]
    pub mode: VarianceMode,
    /// Centering value; computed from a frozen large-sample run when absent.
    #[serde(default)]
    pub w_ref: Option<f64>,
    #[serde(default = "default_reference_n")]
    pub reference_n: usize,
    #[serde(default = "default_reference_m")]
    pub reference_m: usize,
    #[serde(default)]
    pub dense_n: Option<usize>,
    #[serde(default)]
    pub dense_m: Option<usize>,
    /// Also record the plug-in variance per replicate.
    #[serde(default = "default_true")]
    pub variance: bool,
}

fn one_sample() -> VarianceMode {
    VarianceMode::OneSample
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nodes: Vec<usize>,
    #[serde(default = "default_boundary")]
    pub boundary: Boundary,
}

impl GridParams {
    pub fn build(&self) -> Result<Grid> {
        Grid::from_box(&self.lower, &self.upper, &self.nodes, self.boundary)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NullSimParams {
    pub spec: DistributionSpec,
    pub p: f64,
    pub sigma: f64,
    pub grid: GridParams,
    pub n_surrogate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdeParams {
    pub family: ParametricFamily,
    pub theta_star: Vec<f64>,
    pub n: usize,
    pub p: f64,
    pub sigma: f64,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub n_model: Option<usize>,
    #[serde(default)]
    pub options: Option<MdeOptions>,
}

impl MdeParams {
    /// Explicit options, or the defaults with `ftol = 1e-4 / sqrt(n)`.
    pub fn options(&self) -> MdeOptions {
        self.options.unwrap_or(MdeOptions {
            ftol: 1e-4 / (self.n as f64).sqrt(),
            ..MdeOptions::default()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EqualityParams {
    pub mu: DistributionSpec,
    pub nu: DistributionSpec,
    pub n: usize,
    pub p: f64,
    pub sigma: f64,
    #[serde(default = "default_m")]
    pub m: usize,
    pub alpha: f64,
    #[serde(default = "default_b", rename = "B")]
    pub b: usize,
    #[serde(default)]
    pub coupling: NoiseCoupling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CiParams {
    pub mu: DistributionSpec,
    pub nu: DistributionSpec,
    pub n: usize,
    pub p: f64,
    pub sigma: f64,
    #[serde(default = "default_m")]
    pub m: usize,
    pub alpha: f64,
    #[serde(default = "default_b", rename = "B")]
    pub b: usize,
    #[serde(default)]
    pub target: Option<f64>,
    #[serde(default = "default_reference_n")]
    pub reference_n: usize,
    #[serde(default = "default_reference_m")]
    pub reference_m: usize,
}

/// A parsed experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum Experiment {
    /// `sqrt(n) W(mu_n, mu)` against a frozen dense sample of `mu`.
    NullMc(NullMcParams),
    /// `sqrt(n) W(mu_n, mu'_n)` for two independent samples of one law.
    TwoSampleNullMc(TwoSampleNullParams),
    /// `sqrt(n) (W_hat - W_ref)` and the plug-in variance.
    AltClt(AltCltParams),
    /// Grid surrogate of the null limit law.
    NullSim(NullSimParams),
    MdeLimit(MdeParams),
    MdeValue(MdeParams),
    EqualityTest(EqualityParams),
    CiCoverage(CiParams),
}

pub const COMMANDS: [&str; 8] = [
    "null_mc",
    "two_sample_null_mc",
    "alt_clt",
    "null_sim",
    "mde_limit",
    "mde_value",
    "equality_test",
    "ci_coverage",
];

fn params<T: serde::de::DeserializeOwned>(v: &serde_json::Value) -> Result<T> {
    Ok(serde_json::from_value(v.clone())?)
}

fn smoothing(p: f64, sigma: f64, m: usize) -> Result<SmoothingConfig> {
    SmoothingConfig::new(p, sigma, m)
}

fn positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::Config(format!("{name} must be at least 1")));
    }
    Ok(())
}

impl Experiment {
    pub fn parse(cfg: &ExperimentConfig) -> Result<Self> {
        let v = &cfg.params;
        let exp = match cfg.command.as_str() {
            "null_mc" => Experiment::NullMc(params(v)?),
            "two_sample_null_mc" => Experiment::TwoSampleNullMc(params(v)?),
            "alt_clt" => Experiment::AltClt(params(v)?),
            "null_sim" => Experiment::NullSim(params(v)?),
            "mde_limit" => Experiment::MdeLimit(params(v)?),
            "mde_value" => Experiment::MdeValue(params(v)?),
            "equality_test" => Experiment::EqualityTest(params(v)?),
            "ci_coverage" => Experiment::CiCoverage(params(v)?),
            other => {
                return Err(Error::Config(format!(
                    "unknown experiment command `{other}` (expected one of {})",
                    COMMANDS.join(", ")
                )))
            }
        };
        exp.validate()?;
        Ok(exp)
    }

    fn validate(&self) -> Result<()> {
        match self {
            Experiment::NullMc(p) => {
                p.spec.validate()?;
                positive("n", p.n)?;
                smoothing(p.p, p.sigma, p.m)?;
                if p.method == NullMcMethod::Quadrature && p.spec.dim != 1 {
                    return Err(Error::Config("quadrature null_mc needs dim = 1".into()));
                }
            }
            Experiment::TwoSampleNullMc(p) => {
                p.spec.validate()?;
                positive("n", p.n)?;
                smoothing(p.p, p.sigma, p.m)?;
            }
            Experiment::AltClt(p) => {
                p.mu.validate()?;
                p.nu.validate()?;
                positive("n", p.n)?;
                positive("reference_n", p.reference_n)?;
                positive("reference_m", p.reference_m)?;
                smoothing(p.p, p.sigma, p.m)?;
                if p.mu.dim != p.nu.dim {
                    return Err(Error::Dimension("mu and nu dimensions differ".into()));
                }
            }
            Experiment::NullSim(p) => {
                p.spec.validate()?;
                smoothing(p.p, p.sigma, 1)?;
                p.grid.build()?;
                if p.n_surrogate < MIN_SURROGATE {
                    return Err(Error::Config(format!("n_surrogate must be at least {MIN_SURROGATE}")));
                }
            }
            Experiment::MdeLimit(p) | Experiment::MdeValue(p) => {
                p.family.validate()?;
                positive("n", p.n)?;
                smoothing(p.p, p.sigma, p.m)?;
                if !p.family.contains(&p.theta_star) {
                    return Err(Error::Config("theta_star must lie in the parameter box".into()));
                }
            }
            Experiment::EqualityTest(p) => {
                p.mu.validate()?;
                p.nu.validate()?;
                positive("n", p.n)?;
                positive("B", p.b)?;
                smoothing(p.p, p.sigma, p.m)?;
                check_alpha(p.alpha)?;
            }
            Experiment::CiCoverage(p) => {
                p.mu.validate()?;
                p.nu.validate()?;
                positive("n", p.n)?;
                positive("B", p.b)?;
                smoothing(p.p, p.sigma, p.m)?;
                check_alpha(p.alpha)?;
            }
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

fn cols(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Frozen dense reference for a known population.
pub fn dense_reference(
    spec: &DistributionSpec,
    n: usize,
    sigma: f64,
    dense_n: Option<usize>,
    dense_m: Option<usize>,
    seed: &SeedPath,
) -> Result<DenseReference> {
    let size = dense_n.unwrap_or_else(|| DenseReference::default_size(n));
    let m = dense_m.unwrap_or_else(|| DenseReference::default_m(size));
    DenseReference::new(sample(spec, size, &seed.child("sample"))?, sigma, m, seed)
}

/// Large-sample value of `W(mu * gamma, nu * gamma)`: a `reference_n` sample
/// of `mu` with `reference_m` noise copies against `nu`, where `nu` is either
/// a dense reference (one-sample setting) or another `reference_n` sample.
pub fn reference_distance(
    mu: &DistributionSpec,
    nu: Target<'_>,
    cfg: &SmoothingConfig,
    reference_n: usize,
    reference_m: usize,
    seed: &SeedPath,
) -> Result<f64> {
    let rcfg = cfg.with_m(reference_m);
    let x = sample(mu, reference_n, &seed.child("mu"))?;
    match nu {
        Target::Dense(d) => value_vs_dense(&x, d, &rcfg, seed),
        Target::Spec(spec) => {
            let y = sample(spec, reference_n, &seed.child("nu"))?;
            estimate_value(&x, &y, &rcfg, seed, false)
        }
    }
}

pub enum Target<'a> {
    Dense(&'a DenseReference),
    Spec(&'a DistributionSpec),
}

/// Validate and run an experiment; writes its outputs when `out` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ReplicationReport> {
    cfg.validate()?;
    let exp = Experiment::parse(cfg)?;
    let root = SeedPath::root(cfg.master_seed).child(cfg.command.as_str());
    let reference = root.child("reference");
    let (r, par) = (cfg.replications, cfg.parallelism);
    let mut refs = BTreeMap::new();
    let mut report = match &exp {
        Experiment::NullMc(p) if p.method == NullMcMethod::Quadrature => {
            let size = p.dense_n.unwrap_or_else(|| DenseReference::default_size(p.n));
            let dense = empirical(&sample(&p.spec, size, &reference.child("sample"))?);
            let scale = (p.n as f64).sqrt();
            run_replications(cols(&["stat"]), r, par, &root, |_, s| {
                let x = empirical(&sample(&p.spec, p.n, &s.child("data"))?);
                Ok(vec![scale * smooth_wasserstein_1d(&x, &dense, p.sigma, p.p)?])
            })?
        }
        Experiment::NullMc(p) => {
            let c = smoothing(p.p, p.sigma, p.m)?;
            let dense = dense_reference(&p.spec, p.n, p.sigma, p.dense_n, p.dense_m, &reference)?;
            let scale = (p.n as f64).sqrt();
            run_replications(cols(&["stat"]), r, par, &root, |_, s| {
                let x = sample(&p.spec, p.n, &s.child("data"))?;
                Ok(vec![scale * value_vs_dense(&x, &dense, &c, s)?])
            })?
        }
        Experiment::TwoSampleNullMc(p) => {
            let c = smoothing(p.p, p.sigma, p.m)?;
            let scale = (p.n as f64).sqrt();
            run_replications(cols(&["stat"]), r, par, &root, |_, s| {
                let x = sample(&p.spec, p.n, &s.child("x"))?;
                let y = sample(&p.spec, p.n, &s.child("y"))?;
                Ok(vec![scale * estimate_value(&x, &y, &c, s, false)?])
            })?
        }
        Experiment::AltClt(p) => {
            let c = smoothing(p.p, p.sigma, p.m)?;
            let scale = (p.n as f64).sqrt();
            let names = if p.variance { cols(&["stat", "v2"]) } else { cols(&["stat"]) };
            match p.mode {
                VarianceMode::OneSample => {
                    let dense = dense_reference(&p.nu, p.n, p.sigma, p.dense_n, p.dense_m, &reference.child("dense"))?;
                    let w_ref = match p.w_ref {
                        Some(w) => w,
                        None => reference_distance(
                            &p.mu,
                            Target::Dense(&dense),
                            &c,
                            p.reference_n,
                            p.reference_m,
                            &reference.child("w"),
                        )?,
                    };
                    refs.insert("w_ref".to_string(), w_ref);
                    run_replications(names, r, par, &root, |_, s| {
                        let x = sample(&p.mu, p.n, &s.child("data"))?;
                        if p.variance {
                            let est = estimate_vs_dense(&x, &dense, &c, s)?;
                            let v2 = plugin_variance(&est, VarianceMode::OneSample)?.v_squared;
                            Ok(vec![scale * (est.value_wp - w_ref), v2])
                        } else {
                            Ok(vec![scale * (value_vs_dense(&x, &dense, &c, s)? - w_ref)])
                        }
                    })?
                }
                VarianceMode::TwoSample => {
                    let w_ref = match p.w_ref {
                        Some(w) => w,
                        None => reference_distance(
                            &p.mu,
                            Target::Spec(&p.nu),
                            &c,
                            p.reference_n,
                            p.reference_m,
                            &reference.child("w"),
                        )?,
                    };
                    refs.insert("w_ref".to_string(), w_ref);
                    run_replications(names, r, par, &root, |_, s| {
                        let x = sample(&p.mu, p.n, &s.child("x"))?;
                        let y = sample(&p.nu, p.n, &s.child("y"))?;
                        if p.variance {
                            let est = estimate_swd(&x, &y, &c, s, false)?;
                            let v2 = plugin_variance(&est, VarianceMode::TwoSample)?.v_squared;
                            Ok(vec![scale * (est.value_wp - w_ref), v2])
                        } else {
                            Ok(vec![scale * (estimate_value(&x, &y, &c, s, false)? - w_ref)])
                        }
                    })?
                }
            }
        }
        Experiment::NullSim(p) => {
            let c = smoothing(p.p, p.sigma, 1)?;
            let grid = p.grid.build()?;
            let rho = project_to_grid(GridSource::Spec(&p.spec), p.sigma, &grid)?;
            run_replications(cols(&["norm"]), r, par, &root, |_, s| {
                Ok(vec![null_limit_draw(&p.spec, &c, &rho, p.n_surrogate, s)?])
            })?
        }
        Experiment::MdeLimit(p) | Experiment::MdeValue(p) => {
            let kind = if matches!(exp, Experiment::MdeLimit(_)) {
                MdeExperimentKind::Limit
            } else {
                MdeExperimentKind::Value
            };
            let c = smoothing(p.p, p.sigma, p.m)?;
            mde_experiment(
                kind,
                &p.family,
                &p.theta_star,
                &c,
                p.n,
                p.n_model.unwrap_or(p.n),
                &p.options(),
                r,
                par,
                &root,
            )?
        }
        Experiment::EqualityTest(p) => {
            let c = smoothing(p.p, p.sigma, p.m)?;
            run_replications(
                cols(&["statistic", "critical_value", "p_value", "reject"]),
                r,
                par,
                &root,
                |_, s| {
                    let x = sample(&p.mu, p.n, &s.child("x"))?;
                    let y = sample(&p.nu, p.n, &s.child("y"))?;
                    let t = equality_test(&x, &y, &c, p.alpha, p.b, &s.child("test"), p.coupling)?;
                    Ok(vec![t.statistic, t.critical_value, t.p_value, f64::from(u8::from(t.reject))])
                },
            )?
        }
        Experiment::CiCoverage(p) => {
            let c = smoothing(p.p, p.sigma, p.m)?;
            let target = match p.target {
                Some(t) => t,
                None => reference_distance(
                    &p.mu,
                    Target::Spec(&p.nu),
                    &c,
                    p.reference_n,
                    p.reference_m,
                    &reference.child("w"),
                )?,
            };
            refs.insert("target".to_string(), target);
            run_replications(cols(&["lo", "hi", "estimate", "covered"]), r, par, &root, |_, s| {
                let x = sample(&p.mu, p.n, &s.child("x"))?;
                let y = sample(&p.nu, p.n, &s.child("y"))?;
                let ci = confidence_interval(&x, &y, &c, p.alpha, p.b, &s.child("ci"))?;
                let covered = ci.lo <= target && target <= ci.hi;
                Ok(vec![ci.lo, ci.hi, ci.estimate, f64::from(u8::from(covered))])
            })?
        }
    };
    report.metadata.command = cfg.command.clone();
    report.metadata.config_hash = cfg.hash();
    report.metadata.references = refs;
    if let Some(dir) = &cfg.out {
        report.write_to(dir)?;
    }
    Ok(report)
}
