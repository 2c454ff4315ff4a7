//! Bootstrap laws of the smooth distance, bootstrap confidence intervals and
//! the two-sample equality test.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{estimate_value, line_distance, DenseReference, LineCloud};
use crate::measures::{augment_with, empirical, DiscreteMeasure, NoiseTensor, Sample, SmoothingConfig};
use crate::ot::solve_exact;
use crate::seed::SeedPath;
use crate::stats::{lower_quantile, sort_floats};

pub const DEFAULT_B: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapScheme {
    OneSampleNull,
    OneSampleAlt,
    TwoSampleAlt,
    PooledNull,
    /// Independent resampling of both samples under the null. Not a
    /// consistent bootstrap; kept only to exhibit that.
    NaiveNull,
}

impl BootstrapScheme {
    pub fn name(self) -> &'static str {
        match self {
            BootstrapScheme::OneSampleNull => "one_sample_null",
            BootstrapScheme::OneSampleAlt => "one_sample_alt",
            BootstrapScheme::TwoSampleAlt => "two_sample_alt",
            BootstrapScheme::PooledNull => "pooled_null",
            BootstrapScheme::NaiveNull => "naive_null",
        }
    }
}

/// Replicate statistics of one bootstrap run, sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapDistribution {
    pub values: Vec<f64>,
    pub scheme: BootstrapScheme,
    pub seed_path: SeedPath,
    /// Whether the values carry the `sqrt(n)` factor.
    pub scaled: bool,
}

impl BootstrapDistribution {
    fn from_values(mut values: Vec<f64>, scheme: BootstrapScheme, seed: &SeedPath, scaled: bool) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("bootstrap replicate value {v}")));
        }
        sort_floats(&mut values);
        Ok(BootstrapDistribution {
            values,
            scheme,
            seed_path: seed.clone(),
            scaled,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn quantile(&self, alpha: f64) -> Result<f64> {
        quantile(self, alpha)
    }

    /// One column with header `value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["value"])?;
        for v in &self.values {
            out.write_record([v.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Lower empirical quantile `values[ceil(alpha B) - 1]`.
pub fn quantile(dist: &BootstrapDistribution, alpha: f64) -> Result<f64> {
    lower_quantile(&dist.values, alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub estimate: f64,
    pub alpha: f64,
}

/// How the test statistic draws its smoothing noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseCoupling {
    #[default]
    Independent,
    /// One tensor shared by both samples, matched by index.
    Common,
}

/// Augmented sample whose parents can be reweighted without rebuilding it.
enum Cloud {
    Line(LineCloud),
    General { atoms: DiscreteMeasure, origin: Vec<usize>, m: usize },
}

impl Cloud {
    fn new(x: &Sample, noise: &NoiseTensor, sigma: f64) -> Result<Self> {
        if x.dim() == 1 {
            return Ok(Cloud::Line(LineCloud::new(x, noise, sigma)?));
        }
        let atoms = augment_with(&empirical(x), noise, sigma)?;
        let origin = atoms.origin_index.clone().unwrap_or_default();
        Ok(Cloud::General {
            atoms,
            origin,
            m: noise.m,
        })
    }

    /// The augmented measure when parent `i` has weight `parent[i]`, with
    /// zero-weight atoms dropped (general case only).
    fn reweighted(&self, parent: &[f64]) -> Result<DiscreteMeasure> {
        let Cloud::General { atoms, origin, m } = self else {
            unreachable!("reweighted is only used off the line")
        };
        let keep: Vec<usize> = (0..atoms.len()).filter(|&k| parent[origin[k]] > 0.0).collect();
        let inv = 1.0 / *m as f64;
        DiscreteMeasure::new(
            atoms.points.select(ndarray::Axis(0), &keep),
            keep.iter().map(|&k| parent[origin[k]] * inv).collect(),
        )
    }
}

fn cloud_distance(a: &Cloud, wa: &[f64], b: &Cloud, wb: &[f64], p: f64) -> Result<f64> {
    match (a, b) {
        (Cloud::Line(a), Cloud::Line(b)) => Ok(line_distance(a, &a.child_weights(wa), b, &b.child_weights(wb), p)),
        _ => {
            let (ma, mb) = (a.reweighted(wa)?, b.reweighted(wb)?);
            Ok(solve_exact(&ma, &mb, p)?.0.primal_cost.max(0.0).powf(1.0 / p))
        }
    }
}

/// Distance from a reweighted cloud to the dense reference.
fn dense_distance(a: &Cloud, wa: &[f64], dense: &DenseReference, p: f64) -> Result<f64> {
    match (a, dense.line()) {
        (Cloud::Line(a), Some(line)) => Ok(line_distance(
            a,
            &a.child_weights(wa),
            line,
            &line.uniform_weights(),
            p,
        )),
        _ => {
            let ma = a.reweighted(wa)?;
            Ok(solve_exact(&ma, &dense.augmented, p)?.0.primal_cost.max(0.0).powf(1.0 / p))
        }
    }
}

/// Multinomial resampling counts as parent weights summing to one.
fn resample_weights(n: usize, seed: &SeedPath) -> Vec<f64> {
    let mut rng = seed.rng();
    let mut w = vec![0.0; n];
    let inv = 1.0 / n as f64;
    for _ in 0..n {
        w[rng.random_range(0..n)] += inv;
    }
    w
}

fn resample_indices(n: usize, draws: usize, seed: &SeedPath) -> Vec<usize> {
    let mut rng = seed.rng();
    (0..draws).map(|_| rng.random_range(0..n)).collect()
}

fn check_b(b: usize) -> Result<()> {
    if b == 0 {
        return Err(Error::Config("the bootstrap needs B >= 1".into()));
    }
    Ok(())
}

fn check_pair(x: &Sample, y: &Sample) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::Dimension(format!("x has d = {}, y has d = {}", x.dim(), y.dim())));
    }
    if x.n() != y.n() {
        return Err(Error::Size(format!("samples need equal sizes, got {} and {}", x.n(), y.n())));
    }
    if x.n() == 0 {
        return Err(Error::Empty("empty sample".into()));
    }
    Ok(())
}

fn replicate(seed: &SeedPath, b: usize) -> SeedPath {
    seed.child("rep").child(b)
}

fn run<F>(b: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(usize) -> Result<f64> + Sync + Send,
{
    (0..b).into_par_iter().map(f).collect()
}

/// `sqrt(n) W(mu_n^B, mu_n)`. The resample gets `cfg.m` fresh noise copies
/// per draw; `mu_n` itself is augmented once with enough copies to act as a
/// dense smoothed reference, the role the population plays in the statistic
/// this law approximates.
pub fn bootstrap_one_sample_null(x: &Sample, cfg: &SmoothingConfig, b: usize, seed: &SeedPath) -> Result<BootstrapDistribution> {
    cfg.validate()?;
    check_b(b)?;
    let n = x.n();
    if n == 0 {
        return Err(Error::Empty("empty sample".into()));
    }
    let base_m = DenseReference::default_m(n).max(cfg.m);
    let base = DenseReference::new(x.clone(), cfg.sigma, base_m, &seed.child("baseline"))?;
    let scale = (n as f64).sqrt();
    let values = run(b, |r| {
        let s = replicate(seed, r);
        let xb = x.select(&resample_indices(n, n, &s.child("resample")));
        let noise = NoiseTensor::draw(n, cfg.m, x.dim(), &s.child("noise"));
        let cloud = Cloud::new(&xb, &noise, cfg.sigma)?;
        Ok(scale * dense_distance(&cloud, &vec![1.0 / n as f64; n], &base, cfg.p)?)
    })?;
    BootstrapDistribution::from_values(values, BootstrapScheme::OneSampleNull, seed, true)
}

/// `sqrt(n) (W(mu_n^B, nu) - W(mu_n, nu))` against a dense reference for
/// `nu`. Both terms use the replicate's noise tensor, indexed by original
/// sample point, so the difference is pure resampling variation.
pub fn bootstrap_one_sample_alt(
    x: &Sample,
    nu_dense: &DenseReference,
    cfg: &SmoothingConfig,
    b: usize,
    seed: &SeedPath,
) -> Result<BootstrapDistribution> {
    cfg.validate()?;
    check_b(b)?;
    let n = x.n();
    if n == 0 {
        return Err(Error::Empty("empty sample".into()));
    }
    if x.dim() != nu_dense.sample.dim() {
        return Err(Error::Dimension("data and reference dimensions differ".into()));
    }
    let scale = (n as f64).sqrt();
    let uniform = vec![1.0 / n as f64; n];
    let values = run(b, |r| {
        let s = replicate(seed, r);
        let noise = NoiseTensor::draw(n, cfg.m, x.dim(), &s.child("noise"));
        let cloud = Cloud::new(x, &noise, cfg.sigma)?;
        let w = resample_weights(n, &s.child("resample"));
        let boot = dense_distance(&cloud, &w, nu_dense, cfg.p)?;
        let baseline = dense_distance(&cloud, &uniform, nu_dense, cfg.p)?;
        Ok(scale * (boot - baseline))
    })?;
    BootstrapDistribution::from_values(values, BootstrapScheme::OneSampleAlt, seed, true)
}

/// Unscaled `W(mu^B, nu^B) - W(mu_n, nu_n)` per replicate, noise matched.
fn two_sample_deltas(x: &Sample, y: &Sample, cfg: &SmoothingConfig, b: usize, seed: &SeedPath) -> Result<Vec<f64>> {
    let n = x.n();
    let uniform = vec![1.0 / n as f64; n];
    run(b, |r| {
        let s = replicate(seed, r);
        let cx = Cloud::new(x, &NoiseTensor::draw(n, cfg.m, x.dim(), &s.child("noise").child("x")), cfg.sigma)?;
        let cy = Cloud::new(y, &NoiseTensor::draw(n, cfg.m, y.dim(), &s.child("noise").child("y")), cfg.sigma)?;
        let wx = resample_weights(n, &s.child("resample").child("x"));
        let wy = resample_weights(n, &s.child("resample").child("y"));
        Ok(cloud_distance(&cx, &wx, &cy, &wy, cfg.p)? - cloud_distance(&cx, &uniform, &cy, &uniform, cfg.p)?)
    })
}

/// `sqrt(n) (W(mu^B, nu^B) - W(mu_n, nu_n))` with independent resamples of
/// both samples.
pub fn bootstrap_two_sample_alt(x: &Sample, y: &Sample, cfg: &SmoothingConfig, b: usize, seed: &SeedPath) -> Result<BootstrapDistribution> {
    cfg.validate()?;
    check_b(b)?;
    check_pair(x, y)?;
    let scale = (x.n() as f64).sqrt();
    let values = two_sample_deltas(x, y, cfg, b, seed)?.into_iter().map(|v| scale * v).collect();
    BootstrapDistribution::from_values(values, BootstrapScheme::TwoSampleAlt, seed, true)
}

/// `sqrt(n) W(rho_1^B, rho_2^B)` where the two halves are the first and
/// last `n` of `2n` draws from the pooled sample. Each half is smoothed the
/// way the two-sample statistic smooths its data.
pub fn bootstrap_pooled_null(x: &Sample, y: &Sample, cfg: &SmoothingConfig, b: usize, seed: &SeedPath) -> Result<BootstrapDistribution> {
    cfg.validate()?;
    check_b(b)?;
    check_pair(x, y)?;
    let n = x.n();
    let pooled = crate::measures::pool(x, y)?;
    let scale = (n as f64).sqrt();
    let values = run(b, |r| {
        let s = replicate(seed, r);
        let idx = resample_indices(2 * n, 2 * n, &s.child("resample"));
        let first = pooled.select(&idx[..n]);
        let second = pooled.select(&idx[n..]);
        Ok(scale * estimate_value(&first, &second, cfg, &s, false)?)
    })?;
    BootstrapDistribution::from_values(values, BootstrapScheme::PooledNull, seed, true)
}

/// `sqrt(n) W(mu^B, nu^B)` with the two samples resampled separately and no
/// centering. This does not approximate the null law of the statistic.
pub fn bootstrap_naive_null(x: &Sample, y: &Sample, cfg: &SmoothingConfig, b: usize, seed: &SeedPath) -> Result<BootstrapDistribution> {
    cfg.validate()?;
    check_b(b)?;
    check_pair(x, y)?;
    let n = x.n();
    let scale = (n as f64).sqrt();
    let values = run(b, |r| {
        let s = replicate(seed, r);
        let xb = x.select(&resample_indices(n, n, &s.child("resample").child("x")));
        let yb = y.select(&resample_indices(n, n, &s.child("resample").child("y")));
        Ok(scale * estimate_value(&xb, &yb, cfg, &s, false)?)
    })?;
    BootstrapDistribution::from_values(values, BootstrapScheme::NaiveNull, seed, true)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Basic bootstrap interval `[2W - zeta_{1-alpha/2}, 2W - zeta_{alpha/2}]`,
/// where `zeta` are quantiles of `W + Delta_b` and `Delta_b` the noise-matched
/// replicate differences. The lower end is clamped at zero.
pub fn confidence_interval(
    x: &Sample,
    y: &Sample,
    cfg: &SmoothingConfig,
    alpha: f64,
    b: usize,
    seed: &SeedPath,
) -> Result<Interval> {
    cfg.validate()?;
    check_alpha(alpha)?;
    check_b(b)?;
    check_pair(x, y)?;
    let estimate = estimate_value(x, y, cfg, &seed.child("estimate"), false)?;
    let mut zeta: Vec<f64> = two_sample_deltas(x, y, cfg, b, &seed.child("bootstrap"))?
        .into_iter()
        .map(|d| estimate + d)
        .collect();
    sort_floats(&mut zeta);
    let upper = lower_quantile(&zeta, 1.0 - alpha / 2.0)?;
    let lower = lower_quantile(&zeta, alpha / 2.0)?;
    let hi = (2.0 * estimate - lower).max(0.0);
    let lo = (2.0 * estimate - upper).clamp(0.0, hi);
    Ok(Interval { lo, hi, estimate, alpha })
}

/// Rejects equality when `sqrt(n) W(mu_n, nu_n)` exceeds the `1 - alpha`
/// quantile of the pooled bootstrap.
pub fn equality_test(
    x: &Sample,
    y: &Sample,
    cfg: &SmoothingConfig,
    alpha: f64,
    b: usize,
    seed: &SeedPath,
    coupling: NoiseCoupling,
) -> Result<TestResult> {
    cfg.validate()?;
    check_alpha(alpha)?;
    check_pair(x, y)?;
    let n = x.n();
    let statistic =
        (n as f64).sqrt() * estimate_value(x, y, cfg, &seed.child("statistic"), coupling == NoiseCoupling::Common)?;
    let dist = bootstrap_pooled_null(x, y, cfg, b, &seed.child("pooled"))?;
    test_from_distribution(statistic, &dist, alpha)
}

/// Decision and p-value for a statistic against a bootstrap null law.
pub fn test_from_distribution(statistic: f64, dist: &BootstrapDistribution, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    let critical_value = quantile(dist, 1.0 - alpha)?;
    let exceed = dist.values.iter().filter(|v| **v >= statistic).count();
    Ok(TestResult {
        statistic,
        critical_value,
        p_value: (1 + exceed) as f64 / (dist.len() + 1) as f64,
        reject: statistic > critical_value,
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{sample, DistributionSpec};

    fn cfg() -> SmoothingConfig {
        SmoothingConfig::new(2.0, 0.5, 8).unwrap()
    }

    fn unif(n: usize, seed: u64) -> Sample {
        sample(&DistributionSpec::uniform(0.0, 1.0), n, &SeedPath::root(seed)).unwrap()
    }

    #[test]
    fn quantile_convention() {
        let d = BootstrapDistribution::from_values(vec![4.0, 2.0, 1.0, 3.0], BootstrapScheme::PooledNull, &SeedPath::root(0), true)
            .unwrap();
        assert_eq!(d.values, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(quantile(&d, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&d, 1.0).unwrap(), 4.0);
        assert_eq!(quantile(&d, 0.5).unwrap(), 2.0);
        let empty = BootstrapDistribution {
            values: vec![],
            scheme: BootstrapScheme::PooledNull,
            seed_path: SeedPath::root(0),
            scaled: true,
        };
        assert!(quantile(&empty, 0.5).is_err());
    }

    #[test]
    fn counts_and_determinism() {
        let x = unif(30, 1);
        let y = unif(30, 2);
        let s = SeedPath::root(5);
        let a = bootstrap_one_sample_null(&x, &cfg(), 3, &s).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a, bootstrap_one_sample_null(&x, &cfg(), 3, &s).unwrap());
        let p = bootstrap_pooled_null(&x, &y, &cfg(), 7, &s).unwrap();
        assert_eq!(p.len(), 7);
        assert!(p.values.iter().all(|v| *v >= 0.0));
        assert!(p.values.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(bootstrap_two_sample_alt(&x, &y, &cfg(), 4, &s).unwrap().len(), 4);
        assert!(bootstrap_pooled_null(&x, &unif(29, 3), &cfg(), 4, &s).is_err());
        assert!(bootstrap_one_sample_null(&x, &cfg(), 0, &s).is_err());
    }

    #[test]
    fn single_point_null_is_pure_noise() {
        let x = Sample::from_1d(&[0.3]).unwrap();
        let d = bootstrap_one_sample_null(&x, &cfg(), 5, &SeedPath::root(1)).unwrap();
        assert!(d.values.iter().all(|v| *v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn single_point_alt_is_zero() {
        // with n = 1 every resample is x itself
        let x = Sample::from_1d(&[0.3]).unwrap();
        let nu = DenseReference::new(unif(2000, 4), 0.5, 2, &SeedPath::root(4)).unwrap();
        let d = bootstrap_one_sample_alt(&x, &nu, &cfg(), 1, &SeedPath::root(1)).unwrap();
        assert_eq!(d.values, vec![0.0]);
    }

    #[test]
    fn identical_samples_never_reject() {
        let x = unif(40, 9);
        let r = equality_test(&x, &x, &cfg(), 0.1, 50, &SeedPath::root(2), NoiseCoupling::Common).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(!r.reject);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn p_value_and_rejection_rule() {
        let d = BootstrapDistribution::from_values(
            (1..=9).map(f64::from).collect(),
            BootstrapScheme::PooledNull,
            &SeedPath::root(0),
            true,
        )
        .unwrap();
        let r = test_from_distribution(7.0, &d, 0.2).unwrap();
        assert_eq!(r.critical_value, 8.0);
        assert!(!r.reject);
        assert!((r.p_value - 4.0 / 10.0).abs() < 1e-15);
        let r = test_from_distribution(8.5, &d, 0.2).unwrap();
        assert!(r.reject);
        assert!((r.p_value - 2.0 / 10.0).abs() < 1e-15);
        let r = test_from_distribution(100.0, &d, 0.2).unwrap();
        assert!((r.p_value - 0.1).abs() < 1e-15);
    }

    #[test]
    fn interval_is_ordered_and_clamped() {
        let x = unif(40, 11);
        let y = unif(40, 12);
        for alpha in [0.05, 0.5, 0.99] {
            let ci = confidence_interval(&x, &y, &cfg(), alpha, 60, &SeedPath::root(3)).unwrap();
            assert!(0.0 <= ci.lo && ci.lo <= ci.hi, "{ci:?}");
        }
        assert!(confidence_interval(&x, &y, &cfg(), 1.0, 10, &SeedPath::root(3)).is_err());
        assert!(confidence_interval(&x, &y, &cfg(), 0.0, 10, &SeedPath::root(3)).is_err());
    }

    #[test]
    fn interval_scales_with_data_and_sigma() {
        let x = unif(30, 21);
        let y = sample(&DistributionSpec::uniform(0.5, 1.5), 30, &SeedPath::root(22)).unwrap();
        let lam = 3.0;
        let base = confidence_interval(&x, &y, &cfg(), 0.1, 40, &SeedPath::root(6)).unwrap();
        let scaled = confidence_interval(
            &x.map_points(|v| lam * v),
            &y.map_points(|v| lam * v),
            &cfg().with_sigma(lam * 0.5),
            0.1,
            40,
            &SeedPath::root(6),
        )
        .unwrap();
        assert!((scaled.lo - lam * base.lo).abs() < 1e-9);
        assert!((scaled.hi - lam * base.hi).abs() < 1e-9);
    }

    #[test]
    fn multivariate_path_runs() {
        let spec = DistributionSpec::uniform_box(vec![0.0, 0.0], vec![1.0, 1.0]);
        let x = sample(&spec, 6, &SeedPath::root(1)).unwrap();
        let y = sample(&spec, 6, &SeedPath::root(2)).unwrap();
        let c = SmoothingConfig::new(2.0, 0.3, 2).unwrap();
        let d = bootstrap_two_sample_alt(&x, &y, &c, 3, &SeedPath::root(3)).unwrap();
        assert_eq!(d.len(), 3);
        let t = equality_test(&x, &y, &c, 0.1, 5, &SeedPath::root(3), NoiseCoupling::Independent).unwrap();
        assert!((0.0..=1.0).contains(&t.p_value));
    }
}
