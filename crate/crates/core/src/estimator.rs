//! Point estimates of the smooth distance from samples, and plug-in
//! asymptotic variances built from the transport duals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{augment_with, empirical, DiscreteMeasure, NoiseTensor, Sample, SmoothingConfig};
use crate::ot::one_d::sort_permutation;
use crate::ot::{solve_exact, sorted_cost_1d, DualPotentials, TransportPlan};
use crate::seed::SeedPath;
use crate::stats::sample_variance;

const DEGENERATE_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct SmoothDistanceEstimate {
    pub value_wp: f64,
    pub value_sp: f64,
    pub plan: TransportPlan,
    pub duals: DualPotentials,
    pub cfg: SmoothingConfig,
    /// Parent sample index of every atom of the augmented first measure.
    pub origin_x: Vec<usize>,
    pub origin_y: Vec<usize>,
    pub n_x: usize,
    pub n_y: usize,
    pub seed_path: Option<SeedPath>,
}

/// JSON form of an estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub value_wp: f64,
    pub value_sp: f64,
    pub p: f64,
    pub sigma: f64,
    pub m: usize,
    pub n: usize,
    pub seed_path: String,
}

impl SmoothDistanceEstimate {
    pub fn summary(&self) -> EstimateSummary {
        EstimateSummary {
            value_wp: self.value_wp,
            value_sp: self.value_sp,
            p: self.cfg.p,
            sigma: self.cfg.sigma,
            m: self.cfg.m,
            n: self.n_x,
            seed_path: self.seed_path.as_ref().map(|s| s.to_string()).unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    OneSample,
    TwoSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub v_squared: f64,
    /// Sample variances of the averaged potentials, first side then second.
    pub components: Vec<f64>,
    pub denominator: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

fn check_samples(x: &Sample, y: &Sample, common_noise: bool) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::Dimension(format!("x has d = {}, y has d = {}", x.dim(), y.dim())));
    }
    if common_noise && x.n() != y.n() {
        return Err(Error::Size(format!(
            "common noise needs equal sizes, got {} and {}",
            x.n(),
            y.n()
        )));
    }
    Ok(())
}

/// The noise tensors used by [`estimate_swd`] for a given seed path.
pub fn estimator_noise(x: &Sample, y: &Sample, m: usize, seed: &SeedPath, common_noise: bool) -> (NoiseTensor, NoiseTensor) {
    let d = x.dim();
    if common_noise {
        let z = NoiseTensor::draw(x.n(), m, d, &seed.child("noise"));
        (z.clone(), z)
    } else {
        (
            NoiseTensor::draw(x.n(), m, d, &seed.child("noise").child("x")),
            NoiseTensor::draw(y.n(), m, d, &seed.child("noise").child("y")),
        )
    }
}

/// Smooth distance between the noise-augmented empirical measures of `x` and
/// `y`. With `common_noise` both samples get the same noise tensor, matched by
/// sample index.
pub fn estimate_swd(
    x: &Sample,
    y: &Sample,
    cfg: &SmoothingConfig,
    seed: &SeedPath,
    common_noise: bool,
) -> Result<SmoothDistanceEstimate> {
    cfg.validate()?;
    check_samples(x, y, common_noise)?;
    let (nx, ny) = estimator_noise(x, y, cfg.m, seed, common_noise);
    let mut est = estimate_with_noise(x, y, cfg, &nx, &ny)?;
    est.seed_path = Some(seed.clone());
    Ok(est)
}

/// [`estimate_swd`] with explicitly supplied noise tensors.
pub fn estimate_with_noise(
    x: &Sample,
    y: &Sample,
    cfg: &SmoothingConfig,
    noise_x: &NoiseTensor,
    noise_y: &NoiseTensor,
) -> Result<SmoothDistanceEstimate> {
    check_samples(x, y, false)?;
    let ax = augment_with(&empirical(x), noise_x, cfg.sigma)?;
    let ay = augment_with(&empirical(y), noise_y, cfg.sigma)?;
    estimate_augmented(&ax, &ay, cfg, x.n(), y.n())
}

/// Estimate between two already augmented measures carrying origin maps.
pub fn estimate_augmented(
    ax: &DiscreteMeasure,
    ay: &DiscreteMeasure,
    cfg: &SmoothingConfig,
    n_x: usize,
    n_y: usize,
) -> Result<SmoothDistanceEstimate> {
    let origin_x = ax
        .origin_index
        .clone()
        .ok_or_else(|| Error::MissingOrigin("first measure".into()))?;
    let origin_y = ay
        .origin_index
        .clone()
        .ok_or_else(|| Error::MissingOrigin("second measure".into()))?;
    let (plan, duals) = solve_exact(ax, ay, cfg.p)?;
    let value_sp = plan.primal_cost.max(0.0);
    let value_wp = value_sp.powf(1.0 / cfg.p);
    Ok(SmoothDistanceEstimate {
        value_wp,
        value_sp: value_wp.powf(cfg.p),
        plan,
        duals,
        cfg: *cfg,
        origin_x,
        origin_y,
        n_x,
        n_y,
        seed_path: None,
    })
}

/// `ḡ_i`: the average of the chosen dual over the noise children of sample
/// point `i`.
pub fn barycentric_potential(duals: &DualPotentials, origin_index: &[usize], side: Side, n: usize) -> Result<Vec<f64>> {
    let values = match side {
        Side::Source => &duals.g,
        Side::Target => &duals.gc,
    };
    if origin_index.len() != values.len() {
        return Err(Error::MissingOrigin(format!(
            "{} origin entries for {} dual values",
            origin_index.len(),
            values.len()
        )));
    }
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (&o, &v) in origin_index.iter().zip(values) {
        if o >= n {
            return Err(Error::MissingOrigin(format!("origin {o} outside 0..{n}")));
        }
        sum[o] += v;
        count[o] += 1;
    }
    sum.iter()
        .zip(&count)
        .enumerate()
        .map(|(i, (s, &c))| {
            if c == 0 {
                Err(Error::MissingOrigin(format!("sample point {i} has no children")))
            } else {
                Ok(s / c as f64)
            }
        })
        .collect()
}

/// Plug-in asymptotic variance `Var(ḡ) / (p^2 W^{2(p-1)})`, plus the `ḡ^c`
/// term in two-sample mode.
pub fn plugin_variance(est: &SmoothDistanceEstimate, mode: VarianceMode) -> Result<VarianceEstimate> {
    if !(est.value_wp > DEGENERATE_TOL) {
        return Err(Error::DegenerateNull(format!(
            "estimated distance {:.3e} is too small for the alternative-regime variance",
            est.value_wp
        )));
    }
    let p = est.cfg.p;
    let gbar = barycentric_potential(&est.duals, &est.origin_x, Side::Source, est.n_x)?;
    let mut components = vec![sample_variance(&gbar)];
    if mode == VarianceMode::TwoSample {
        let gcbar = barycentric_potential(&est.duals, &est.origin_y, Side::Target, est.n_y)?;
        components.push(sample_variance(&gcbar));
    }
    let denominator = p * p * est.value_wp.powf(2.0 * (p - 1.0));
    let v_squared = components.iter().sum::<f64>() / denominator;
    Ok(VarianceEstimate {
        v_squared,
        components,
        denominator,
    })
}

/// Noise-augmented 1-D sample kept sorted, with the parent index of every
/// child. Reweighting the parents (resampling) reuses the sorted order.
#[derive(Debug, Clone)]
pub struct LineCloud {
    pub xs: Vec<f64>,
    pub origin: Vec<u32>,
    pub n: usize,
    pub m: usize,
}

impl LineCloud {
    /// Children `x_i + sigma Z[i, j]`, sorted.
    pub fn new(x: &Sample, noise: &NoiseTensor, sigma: f64) -> Result<Self> {
        if x.dim() != 1 || noise.dim != 1 {
            return Err(Error::Dimension("LineCloud needs d = 1".into()));
        }
        if noise.atoms < x.n() {
            return Err(Error::Size("noise tensor has too few atoms".into()));
        }
        let m = noise.m;
        let mut raw = Vec::with_capacity(x.n() * m);
        for i in 0..x.n() {
            let xi = x.points[[i, 0]];
            raw.extend(noise.block(i).iter().map(|z| xi + sigma * z));
        }
        Ok(Self::from_children(raw, x.n(), m))
    }

    /// From child locations laid out parent-major (`m` consecutive children per
    /// parent).
    pub fn from_children(raw: Vec<f64>, n: usize, m: usize) -> Self {
        let perm = sort_permutation(&raw);
        LineCloud {
            xs: perm.iter().map(|&k| raw[k]).collect(),
            origin: perm.iter().map(|&k| (k / m) as u32).collect(),
            n,
            m,
        }
    }

    /// Child weights when parent `i` carries weight `parent[i]`.
    pub fn child_weights(&self, parent: &[f64]) -> Vec<f64> {
        let inv = 1.0 / self.m as f64;
        self.origin.iter().map(|&o| parent[o as usize] * inv).collect()
    }

    pub fn uniform_weights(&self) -> Vec<f64> {
        vec![1.0 / (self.n * self.m) as f64; self.xs.len()]
    }

    pub fn shifted(&self, c: f64) -> LineCloud {
        LineCloud {
            xs: self.xs.iter().map(|v| v + c).collect(),
            origin: self.origin.clone(),
            n: self.n,
            m: self.m,
        }
    }
}

/// `W_p` between two weighted sorted clouds.
pub fn line_distance(a: &LineCloud, wa: &[f64], b: &LineCloud, wb: &[f64], p: f64) -> f64 {
    sorted_cost_1d(&a.xs, wa, &b.xs, wb, p).max(0.0).powf(1.0 / p)
}

/// Multiplicities of a resample, as parent weights summing to one.
pub fn counts_to_weights(counts: &[u32], total: usize) -> Vec<f64> {
    let inv = 1.0 / total as f64;
    counts.iter().map(|&c| c as f64 * inv).collect()
}

/// Value-only version of [`estimate_swd`] (same noise, same number); uses the
/// sorted merge in one dimension.
pub fn estimate_value(x: &Sample, y: &Sample, cfg: &SmoothingConfig, seed: &SeedPath, common_noise: bool) -> Result<f64> {
    cfg.validate()?;
    check_samples(x, y, common_noise)?;
    let (nx, ny) = estimator_noise(x, y, cfg.m, seed, common_noise);
    if x.dim() == 1 {
        let a = LineCloud::new(x, &nx, cfg.sigma)?;
        let b = LineCloud::new(y, &ny, cfg.sigma)?;
        Ok(line_distance(&a, &a.uniform_weights(), &b, &b.uniform_weights(), cfg.p))
    } else {
        Ok(estimate_with_noise(x, y, cfg, &nx, &ny)?.value_wp)
    }
}

/// Known population `ν` represented by a frozen dense sample, augmented once.
#[derive(Debug, Clone)]
pub struct DenseReference {
    pub sample: Sample,
    pub augmented: DiscreteMeasure,
    pub m: usize,
    line: Option<LineCloud>,
}

impl DenseReference {
    pub const MIN_SIZE: usize = 10_000;
    /// Target number of augmented atoms on the dense side.
    pub const TARGET_ATOMS: usize = 100_000;

    /// Dense-sample size used for a data sample of size `n`.
    pub fn default_size(n: usize) -> usize {
        (10 * n).max(Self::MIN_SIZE)
    }

    /// Noise copies per dense point so that the augmented reference has about
    /// [`Self::TARGET_ATOMS`] atoms.
    pub fn default_m(size: usize) -> usize {
        Self::TARGET_ATOMS.div_ceil(size).max(1)
    }

    pub fn new(sample: Sample, sigma: f64, m: usize, seed: &SeedPath) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("dense reference needs m >= 1".into()));
        }
        let noise = NoiseTensor::draw(sample.n(), m, sample.dim(), &seed.child("dense-noise"));
        let augmented = augment_with(&empirical(&sample), &noise, sigma)?;
        let line = if sample.dim() == 1 {
            Some(LineCloud::new(&sample, &noise, sigma)?)
        } else {
            None
        };
        Ok(DenseReference {
            sample,
            augmented,
            m,
            line,
        })
    }

    pub fn line(&self) -> Option<&LineCloud> {
        self.line.as_ref()
    }
}

/// Estimate against a dense reference; the data side uses `cfg.m` noise copies.
pub fn estimate_vs_dense(x: &Sample, dense: &DenseReference, cfg: &SmoothingConfig, seed: &SeedPath) -> Result<SmoothDistanceEstimate> {
    cfg.validate()?;
    if x.dim() != dense.sample.dim() {
        return Err(Error::Dimension("data and reference dimensions differ".into()));
    }
    let noise = NoiseTensor::draw(x.n(), cfg.m, x.dim(), &seed.child("noise").child("x"));
    let ax = augment_with(&empirical(x), &noise, cfg.sigma)?;
    let mut est = estimate_augmented(&ax, &dense.augmented, cfg, x.n(), dense.sample.n())?;
    est.seed_path = Some(seed.clone());
    Ok(est)
}

/// Value-only [`estimate_vs_dense`].
pub fn value_vs_dense(x: &Sample, dense: &DenseReference, cfg: &SmoothingConfig, seed: &SeedPath) -> Result<f64> {
    cfg.validate()?;
    let noise = NoiseTensor::draw(x.n(), cfg.m, x.dim(), &seed.child("noise").child("x"));
    match dense.line() {
        Some(line) if x.dim() == 1 => {
            let a = LineCloud::new(x, &noise, cfg.sigma)?;
            Ok(line_distance(&a, &a.uniform_weights(), line, &line.uniform_weights(), cfg.p))
        }
        _ => {
            let ax = augment_with(&empirical(x), &noise, cfg.sigma)?;
            Ok(estimate_augmented(&ax, &dense.augmented, cfg, x.n(), dense.sample.n())?.value_wp)
        }
    }
}
