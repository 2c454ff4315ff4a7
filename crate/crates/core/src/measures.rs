//! Distribution specs, sampling, empirical measures, Gaussian-noise
//! augmentation and pooling.

use std::io::{Read, Write};

use ndarray::{s, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::SeedPath;
use crate::stats::{compensated_sum, normal_cdf, normal_pdf, normal_sf};

pub const MAX_DIM: usize = 3;
const WEIGHT_TOL: f64 = 1e-12;

/// Family-specific parameters. Vectors are per axis; mixture components are
/// lists of per-axis vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum Family {
    PointMass {
        location: Vec<f64>,
    },
    Gaussian {
        mean: Vec<f64>,
        scale: Vec<f64>,
        /// Optional per-axis truncation interval `[lo, hi]`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        truncate: Option<Vec<[f64; 2]>>,
    },
    UniformBox {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    GaussianMixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        scales: Vec<Vec<f64>>,
    },
    UniformMixture {
        weights: Vec<f64>,
        lowers: Vec<Vec<f64>>,
        uppers: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    #[serde(flatten)]
    pub family: Family,
    pub dim: usize,
    /// Declared Orlicz-ψ₂ bound of |X|, in units of x.
    #[serde(rename = "psi2", default, skip_serializing_if = "Option::is_none")]
    pub sub_gaussian_psi2: Option<f64>,
}

/// One coordinate of a product-form mixture component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AxisLaw {
    Point(f64),
    Normal { mean: f64, sd: f64 },
    TruncNormal { mean: f64, sd: f64, lo: f64, hi: f64 },
    Uniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub axes: Vec<AxisLaw>,
}

fn check_len(name: &str, v: &[f64], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(Error::Config(format!("{name} has length {} but dim is {dim}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Config(format!("{name} has non-finite entries")));
    }
    Ok(())
}

fn check_scales(name: &str, v: &[f64]) -> Result<()> {
    if v.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Config(format!("{name} must be strictly positive")));
    }
    Ok(())
}

fn check_box(lower: &[f64], upper: &[f64]) -> Result<()> {
    if lower.iter().zip(upper).any(|(l, u)| !(l < u)) {
        return Err(Error::Config("box lower bounds must be below upper bounds".into()));
    }
    Ok(())
}

fn check_weights(w: &[f64], k: usize) -> Result<()> {
    if w.len() != k || k == 0 {
        return Err(Error::Config(format!("expected {k} mixture weights, got {}", w.len())));
    }
    if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::Config("mixture weights must be nonnegative".into()));
    }
    let total = compensated_sum(w.iter().copied());
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::Config(format!("mixture weights sum to {total}, not 1")));
    }
    Ok(())
}

impl DistributionSpec {
    pub fn point_mass(location: Vec<f64>) -> Self {
        let dim = location.len();
        DistributionSpec {
            family: Family::PointMass { location },
            dim,
            sub_gaussian_psi2: None,
        }
    }

    pub fn gaussian(mean: Vec<f64>, scale: Vec<f64>) -> Self {
        let dim = mean.len();
        DistributionSpec {
            family: Family::Gaussian {
                mean,
                scale,
                truncate: None,
            },
            dim,
            sub_gaussian_psi2: None,
        }
    }

    pub fn truncated_gaussian(mean: Vec<f64>, scale: Vec<f64>, bounds: Vec<[f64; 2]>) -> Self {
        let dim = mean.len();
        DistributionSpec {
            family: Family::Gaussian {
                mean,
                scale,
                truncate: Some(bounds),
            },
            dim,
            sub_gaussian_psi2: None,
        }
    }

    pub fn uniform_box(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        let dim = lower.len();
        DistributionSpec {
            family: Family::UniformBox { lower, upper },
            dim,
            sub_gaussian_psi2: None,
        }
    }

    /// 1-D uniform on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64) -> Self {
        Self::uniform_box(vec![lo], vec![hi])
    }

    pub fn with_psi2(mut self, psi2: f64) -> Self {
        self.sub_gaussian_psi2 = Some(psi2);
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: DistributionSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        if d == 0 || d > MAX_DIM {
            return Err(Error::Config(format!("dim must be in 1..={MAX_DIM}, got {d}")));
        }
        if let Some(psi) = self.sub_gaussian_psi2 {
            if !(psi >= 0.0) || !psi.is_finite() {
                return Err(Error::Config("psi2 must be a nonnegative real".into()));
            }
        }
        match &self.family {
            Family::PointMass { location } => check_len("location", location, d),
            Family::Gaussian {
                mean,
                scale,
                truncate,
            } => {
                check_len("mean", mean, d)?;
                check_len("scale", scale, d)?;
                check_scales("scale", scale)?;
                if let Some(b) = truncate {
                    if b.len() != d {
                        return Err(Error::Config("truncate needs one interval per axis".into()));
                    }
                    let lo: Vec<f64> = b.iter().map(|x| x[0]).collect();
                    let hi: Vec<f64> = b.iter().map(|x| x[1]).collect();
                    check_box(&lo, &hi)?;
                    for (k, iv) in b.iter().enumerate() {
                        let mass = normal_cdf((iv[1] - mean[k]) / scale[k])
                            - normal_cdf((iv[0] - mean[k]) / scale[k]);
                        if mass < 1e-6 {
                            return Err(Error::Config(format!(
                                "truncation interval on axis {k} carries mass {mass:.2e}"
                            )));
                        }
                    }
                }
                Ok(())
            }
            Family::UniformBox { lower, upper } => {
                check_len("lower", lower, d)?;
                check_len("upper", upper, d)?;
                check_box(lower, upper)
            }
            Family::GaussianMixture {
                weights,
                means,
                scales,
            } => {
                check_weights(weights, means.len())?;
                if scales.len() != means.len() {
                    return Err(Error::Config("means and scales differ in length".into()));
                }
                for (m, s) in means.iter().zip(scales) {
                    check_len("mixture mean", m, d)?;
                    check_len("mixture scale", s, d)?;
                    check_scales("mixture scale", s)?;
                }
                Ok(())
            }
            Family::UniformMixture {
                weights,
                lowers,
                uppers,
            } => {
                check_weights(weights, lowers.len())?;
                if uppers.len() != lowers.len() {
                    return Err(Error::Config("lowers and uppers differ in length".into()));
                }
                for (l, u) in lowers.iter().zip(uppers) {
                    check_len("mixture lower", l, d)?;
                    check_len("mixture upper", u, d)?;
                    check_box(l, u)?;
                }
                Ok(())
            }
        }
    }

    /// Product-form mixture decomposition used by sampling and the closed-form
    /// smoothed densities.
    pub fn components(&self) -> Vec<Component> {
        match &self.family {
            Family::PointMass { location } => vec![Component {
                weight: 1.0,
                axes: location.iter().map(|&a| AxisLaw::Point(a)).collect(),
            }],
            Family::Gaussian {
                mean,
                scale,
                truncate,
            } => {
                let axes = (0..self.dim)
                    .map(|k| match truncate {
                        Some(b) => AxisLaw::TruncNormal {
                            mean: mean[k],
                            sd: scale[k],
                            lo: b[k][0],
                            hi: b[k][1],
                        },
                        None => AxisLaw::Normal {
                            mean: mean[k],
                            sd: scale[k],
                        },
                    })
                    .collect();
                vec![Component { weight: 1.0, axes }]
            }
            Family::UniformBox { lower, upper } => vec![Component {
                weight: 1.0,
                axes: lower
                    .iter()
                    .zip(upper)
                    .map(|(&lo, &hi)| AxisLaw::Uniform { lo, hi })
                    .collect(),
            }],
            Family::GaussianMixture {
                weights,
                means,
                scales,
            } => weights
                .iter()
                .zip(means.iter().zip(scales))
                .map(|(&weight, (m, s))| Component {
                    weight,
                    axes: m
                        .iter()
                        .zip(s)
                        .map(|(&mean, &sd)| AxisLaw::Normal { mean, sd })
                        .collect(),
                })
                .collect(),
            Family::UniformMixture {
                weights,
                lowers,
                uppers,
            } => weights
                .iter()
                .zip(lowers.iter().zip(uppers))
                .map(|(&weight, (l, u))| Component {
                    weight,
                    axes: l
                        .iter()
                        .zip(u)
                        .map(|(&lo, &hi)| AxisLaw::Uniform { lo, hi })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn is_compactly_supported(&self) -> bool {
        self.components().iter().all(|c| {
            c.axes.iter().all(|a| {
                matches!(
                    a,
                    AxisLaw::Point(_) | AxisLaw::Uniform { .. } | AxisLaw::TruncNormal { .. }
                )
            })
        })
    }

    /// Density of `spec * N(0, sigma^2 I)` at `z` (`sigma = 0` gives the raw
    /// density, which fails for point masses).
    pub fn smoothed_density(&self, z: &[f64], sigma: f64) -> Result<f64> {
        let mut total = 0.0;
        for c in self.components() {
            let mut prod = c.weight;
            for (law, &zk) in c.axes.iter().zip(z) {
                prod *= law.smoothed_pdf(zk, sigma)?;
            }
            total += prod;
        }
        Ok(total)
    }

    /// Upper bound on the mass of `spec * N(0, sigma^2 I)` outside the box
    /// `[lo_k, hi_k]` (union bound over axes; exact per axis where closed forms
    /// exist).
    pub fn smoothed_outside_mass(&self, lo: &[f64], hi: &[f64], sigma: f64) -> f64 {
        self.components()
            .iter()
            .map(|c| {
                c.weight
                    * c.axes
                        .iter()
                        .enumerate()
                        .map(|(k, law)| law.smoothed_tail_bound(lo[k], hi[k], sigma))
                        .sum::<f64>()
            })
            .sum::<f64>()
            .min(1.0)
    }
}

impl AxisLaw {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            AxisLaw::Point(a) => a,
            AxisLaw::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            AxisLaw::TruncNormal { mean, sd, lo, hi } => loop {
                let x = mean + sd * rng.sample::<f64, _>(StandardNormal);
                if x >= lo && x <= hi {
                    break x;
                }
            },
            AxisLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }

    fn smoothed_pdf(&self, z: f64, sigma: f64) -> Result<f64> {
        if sigma < 0.0 {
            return Err(Error::Config("sigma must be nonnegative".into()));
        }
        Ok(match *self {
            AxisLaw::Point(a) => {
                if sigma == 0.0 {
                    return Err(Error::Config("a point mass has no density at sigma = 0".into()));
                }
                normal_pdf((z - a) / sigma) / sigma
            }
            AxisLaw::Normal { mean, sd } => {
                let s = (sd * sd + sigma * sigma).sqrt();
                normal_pdf((z - mean) / s) / s
            }
            AxisLaw::TruncNormal { mean, sd, lo, hi } => {
                let norm = normal_cdf((hi - mean) / sd) - normal_cdf((lo - mean) / sd);
                if sigma == 0.0 {
                    if z < lo || z > hi {
                        0.0
                    } else {
                        normal_pdf((z - mean) / sd) / sd / norm
                    }
                } else {
                    // N(mean, sd²) restricted to [lo,hi] convolved with N(0, σ²)
                    let v = sd * sd + sigma * sigma;
                    let s = v.sqrt();
                    let c = (sd * sd * z + sigma * sigma * mean) / v;
                    let tau = sd * sigma / s;
                    let inner = normal_cdf((hi - c) / tau) - normal_cdf((lo - c) / tau);
                    normal_pdf((z - mean) / s) / s * inner / norm
                }
            }
            AxisLaw::Uniform { lo, hi } => {
                if sigma == 0.0 {
                    if z < lo || z > hi {
                        0.0
                    } else {
                        1.0 / (hi - lo)
                    }
                } else {
                    (normal_cdf((z - lo) / sigma) - normal_cdf((z - hi) / sigma)) / (hi - lo)
                }
            }
        })
    }

    fn smoothed_tail_bound(&self, lo: f64, hi: f64, sigma: f64) -> f64 {
        let sig = sigma.max(1e-300);
        match *self {
            AxisLaw::Point(a) => normal_cdf((lo - a) / sig) + normal_sf((hi - a) / sig),
            AxisLaw::Normal { mean, sd } => {
                let s = (sd * sd + sigma * sigma).sqrt();
                normal_cdf((lo - mean) / s) + normal_sf((hi - mean) / s)
            }
            AxisLaw::TruncNormal { lo: a, hi: b, .. } | AxisLaw::Uniform { lo: a, hi: b } => {
                if sigma == 0.0 {
                    let left = if lo > a { 1.0 } else { 0.0 };
                    let right = if hi < b { 1.0 } else { 0.0 };
                    return left + right;
                }
                // support is inside [a,b]; worst case puts all mass at the nearer end
                normal_cdf((lo - a) / sigma) + normal_sf((hi - b) / sigma)
            }
        }
    }
}

/// Draw `n` i.i.d. points from `spec`, deterministically from `seed`.
pub fn sample(spec: &DistributionSpec, n: usize, seed: &SeedPath) -> Result<Sample> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Config("sample size must be at least 1".into()));
    }
    let comps = spec.components();
    let mut rng = seed.rng();
    let d = spec.dim;
    let mut points = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        let c = if comps.len() == 1 {
            &comps[0]
        } else {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = comps.len() - 1;
            for (idx, c) in comps.iter().enumerate() {
                acc += c.weight;
                if u < acc {
                    pick = idx;
                    break;
                }
            }
            &comps[pick]
        };
        for (k, law) in c.axes.iter().enumerate() {
            points[[i, k]] = law.sample(&mut rng);
        }
    }
    Ok(Sample {
        points,
        spec_label: Some(format!("{:?}", spec.family).chars().take(64).collect()),
        seed_path: Some(seed.clone()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub points: Array2<f64>,
    pub spec_label: Option<String>,
    pub seed_path: Option<SeedPath>,
}

impl Sample {
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::Empty("a sample needs at least one point".into()));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample points must be finite".into()));
        }
        Ok(Sample {
            points,
            spec_label: None,
            seed_path: None,
        })
    }

    pub fn from_1d(values: &[f64]) -> Result<Self> {
        Self::new(Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("shape"))
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    /// Rows selected by index (used for resampling).
    pub fn select(&self, idx: &[usize]) -> Sample {
        Sample {
            points: self.points.select(ndarray::Axis(0), idx),
            spec_label: self.spec_label.clone(),
            seed_path: None,
        }
    }

    pub fn map_points<F: Fn(f64) -> f64>(&self, f: F) -> Sample {
        Sample {
            points: self.points.mapv(f),
            spec_label: self.spec_label.clone(),
            seed_path: self.seed_path.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let header: Vec<String> = (0..self.dim()).map(|k| format!("x{k}")).collect();
        wr.write_record(&header)?;
        for row in self.points.rows() {
            wr.write_record(row.iter().map(|v| v.to_string()))?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads one point per row; a non-numeric first row is taken as a header.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(r);
        let mut values = Vec::new();
        let mut dim = None;
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            let row = match parsed {
                Ok(row) => row,
                Err(_) if line == 0 => continue,
                Err(e) => return Err(Error::Parse(format!("row {line}: {e}"))),
            };
            match dim {
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(Error::Parse(format!("row {line} has {} columns, expected {d}", row.len())))
                }
                _ => {}
            }
            values.extend(row);
        }
        let d = dim.ok_or_else(|| Error::Empty("CSV contains no points".into()))?;
        Self::new(Array2::from_shape_vec((values.len() / d, d), values).expect("shape"))
    }
}

/// Weighted point cloud. Duplicate atoms are kept distinct.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    pub points: Array2<f64>,
    pub weights: Vec<f64>,
    /// For noise-augmented measures: the index of the parent atom of each point.
    pub origin_index: Option<Vec<usize>>,
}

impl DiscreteMeasure {
    pub fn new(points: Array2<f64>, weights: Vec<f64>) -> Result<Self> {
        let m = DiscreteMeasure {
            points,
            weights,
            origin_index: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn from_1d(values: &[f64], weights: Vec<f64>) -> Result<Self> {
        Self::new(
            Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("shape"),
            weights,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.points.nrows();
        if k == 0 {
            return Err(Error::Empty("measure has no atoms".into()));
        }
        if self.weights.len() != k {
            return Err(Error::Size(format!("{} weights for {k} atoms", self.weights.len())));
        }
        if self.points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("atom locations must be finite".into()));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("weights must be nonnegative".into()));
        }
        let total = compensated_sum(self.weights.iter().copied());
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::Config(format!("weights sum to {total}, not 1")));
        }
        if let Some(o) = &self.origin_index {
            if o.len() != k {
                return Err(Error::Size("origin_index length differs from atom count".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// Locations of a 1-D measure.
    pub fn coords_1d(&self) -> Result<Vec<f64>> {
        if self.dim() != 1 {
            return Err(Error::Dimension(format!("expected d = 1, got d = {}", self.dim())));
        }
        Ok(self.points.column(0).to_vec())
    }
}

/// Uniform weights on the sample points; `origin_index` is the identity.
pub fn empirical(s: &Sample) -> DiscreteMeasure {
    let n = s.n();
    DiscreteMeasure {
        points: s.points.clone(),
        weights: vec![1.0 / n as f64; n],
        origin_index: Some((0..n).collect()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub p: f64,
    pub q: f64,
    pub sigma: f64,
    /// Noise copies per support point.
    pub m: usize,
}

impl SmoothingConfig {
    pub const DEFAULT_M: usize = 32;
    pub const DEFAULT_VARIANCE_M: usize = 128;

    pub fn new(p: f64, sigma: f64, m: usize) -> Result<Self> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(Error::Config(format!("p must exceed 1, got {p}")));
        }
        let cfg = SmoothingConfig {
            p,
            q: p / (p - 1.0),
            sigma,
            m,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0) {
            return Err(Error::Config(format!("p must exceed 1, got {}", self.p)));
        }
        if (1.0 / self.p + 1.0 / self.q - 1.0).abs() > 1e-12 {
            return Err(Error::Config("p and q are not conjugate".into()));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_m(mut self, m: usize) -> Self {
        self.m = m;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }
}

/// Standard normal draws `Z[i, j, k]` for `i < atoms`, `j < m`, `k < dim`,
/// laid out row-major. Index `i` is the parent atom, so one tensor can be
/// reused across measures that share atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTensor {
    pub atoms: usize,
    pub m: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl NoiseTensor {
    pub fn draw(atoms: usize, m: usize, dim: usize, seed: &SeedPath) -> Self {
        let mut rng = seed.rng();
        let values = (0..atoms * m * dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        NoiseTensor {
            atoms,
            m,
            dim,
            values,
        }
    }

    #[inline]
    pub fn get(&self, atom: usize, copy: usize, axis: usize) -> f64 {
        self.values[(atom * self.m + copy) * self.dim + axis]
    }

    /// Children of atom `atom` as a contiguous slice of `m * dim` values.
    pub fn block(&self, atom: usize) -> &[f64] {
        let len = self.m * self.dim;
        &self.values[atom * len..(atom + 1) * len]
    }
}

/// Replace each atom `x_i` by `m` children `x_i + sigma Z_ij` of weight `w_i/m`,
/// with `Z` taken from `noise` at the atom's own index.
pub fn augment_with(mu: &DiscreteMeasure, noise: &NoiseTensor, sigma: f64) -> Result<DiscreteMeasure> {
    let (k, d) = (mu.len(), mu.dim());
    if noise.atoms < k || noise.dim != d {
        return Err(Error::Size(format!(
            "noise tensor {}x{}x{} cannot augment {k} atoms in d = {d}",
            noise.atoms, noise.m, noise.dim
        )));
    }
    let m = noise.m;
    let mut points = Array2::<f64>::zeros((k * m, d));
    let mut weights = Vec::with_capacity(k * m);
    let mut origin = Vec::with_capacity(k * m);
    for i in 0..k {
        let wi = mu.weights[i] / m as f64;
        for j in 0..m {
            let row = i * m + j;
            for a in 0..d {
                points[[row, a]] = mu.points[[i, a]] + sigma * noise.get(i, j, a);
            }
            weights.push(wi);
            origin.push(i);
        }
    }
    Ok(DiscreteMeasure {
        points,
        weights,
        origin_index: Some(origin),
    })
}

/// Gaussian-noise augmentation with a fresh tensor drawn from `seed`.
pub fn smooth_augment(mu: &DiscreteMeasure, cfg: &SmoothingConfig, seed: &SeedPath) -> Result<DiscreteMeasure> {
    mu.validate()?;
    let noise = NoiseTensor::draw(mu.len(), cfg.m, mu.dim(), seed);
    augment_with(mu, &noise, cfg.sigma)
}

/// `2n` rows: the rows of `x` followed by those of `y`.
pub fn pool(x: &Sample, y: &Sample) -> Result<Sample> {
    if x.dim() != y.dim() {
        return Err(Error::Dimension(format!("pool: d = {} vs d = {}", x.dim(), y.dim())));
    }
    if x.n() != y.n() {
        return Err(Error::Size(format!("pool: n = {} vs n = {}", x.n(), y.n())));
    }
    let (n, d) = (x.n(), x.dim());
    let mut points = Array2::<f64>::zeros((2 * n, d));
    points.slice_mut(s![..n, ..]).assign(&x.points);
    points.slice_mut(s![n.., ..]).assign(&y.points);
    Ok(Sample {
        points,
        spec_label: None,
        seed_path: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentStatus {
    Satisfied,
    Violated,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub satisfied: MomentStatus,
    pub detail: String,
}

/// Sufficient check for the exponential moment condition behind the limit
/// theorems: compact support, or a declared ψ₂ bound below `sigma / sqrt(p-1)`.
/// Advisory only.
pub fn check_moment_condition(spec: &DistributionSpec, cfg: &SmoothingConfig) -> MomentReport {
    if spec.is_compactly_supported() {
        return MomentReport {
            satisfied: MomentStatus::Satisfied,
            detail: "compactly supported".into(),
        };
    }
    let threshold = cfg.sigma / (cfg.p - 1.0).sqrt();
    match spec.sub_gaussian_psi2 {
        Some(psi) if psi < threshold => MomentReport {
            satisfied: MomentStatus::Satisfied,
            detail: format!("psi2 bound {psi} < sigma/sqrt(p-1) = {threshold}"),
        },
        Some(psi) => MomentReport {
            satisfied: MomentStatus::Violated,
            detail: format!("psi2 bound {psi} >= sigma/sqrt(p-1) = {threshold}; limit theorems not guaranteed"),
        },
        None => MomentReport {
            satisfied: MomentStatus::Unknown,
            detail: "unbounded support and no psi2 bound declared".into(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{mean, sample_variance};

    fn seed(tag: &str) -> SeedPath {
        SeedPath::root(11).child(tag)
    }

    #[test]
    fn point_mass_sample() {
        let s = sample(&DistributionSpec::point_mass(vec![3.5]), 4, &seed("pm")).unwrap();
        assert!(s.points.iter().all(|&v| v == 3.5));
    }

    #[test]
    fn uniform_sample_mean() {
        let s = sample(&DistributionSpec::uniform(0.0, 1.0), 100_000, &seed("u")).unwrap();
        let m = mean(&s.points.column(0).to_vec());
        assert!((m - 0.5).abs() < 0.01, "mean {m}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = DistributionSpec::gaussian(vec![0.0, 1.0], vec![1.0, 2.0]);
        let a = sample(&spec, 50, &seed("det")).unwrap();
        let b = sample(&spec, 50, &seed("det")).unwrap();
        assert_eq!(a.points, b.points);
        let c = sample(&spec, 50, &seed("det2")).unwrap();
        assert_ne!(a.points, c.points);
    }

    #[test]
    fn truncated_gaussian_stays_in_bounds() {
        let spec = DistributionSpec::truncated_gaussian(vec![0.0], vec![1.0], vec![[-3.0, 3.0]]);
        let s = sample(&spec, 5000, &seed("tn")).unwrap();
        assert!(s.points.iter().all(|v| v.abs() <= 3.0));
    }

    #[test]
    fn mixture_sampling_weights() {
        let spec = DistributionSpec {
            family: Family::UniformMixture {
                weights: vec![0.25, 0.75],
                lowers: vec![vec![0.0], vec![10.0]],
                uppers: vec![vec![1.0], vec![11.0]],
            },
            dim: 1,
            sub_gaussian_psi2: None,
        };
        let s = sample(&spec, 20_000, &seed("mix")).unwrap();
        let frac = s.points.iter().filter(|&&v| v < 5.0).count() as f64 / 20_000.0;
        assert!((frac - 0.25).abs() < 0.02);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(DistributionSpec::gaussian(vec![0.0], vec![0.0]).validate().is_err());
        assert!(DistributionSpec::uniform(1.0, 0.0).validate().is_err());
        assert!(DistributionSpec::point_mass(vec![0.0; 4]).validate().is_err());
        let bad = DistributionSpec {
            family: Family::GaussianMixture {
                weights: vec![0.5, 0.6],
                means: vec![vec![0.0], vec![1.0]],
                scales: vec![vec![1.0], vec![1.0]],
            },
            dim: 1,
            sub_gaussian_psi2: None,
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        assert!(sample(&DistributionSpec::uniform(0.0, 1.0), 0, &seed("z")).is_err());
    }

    #[test]
    fn spec_json_shape() {
        let spec = DistributionSpec::uniform_box(vec![0.0], vec![1.0]).with_psi2(0.3);
        let json = spec.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["family"], "uniform_box");
        assert_eq!(v["dim"], 1);
        assert_eq!(v["psi2"], 0.3);
        assert_eq!(v["params"]["upper"][0], 1.0);
        assert_eq!(DistributionSpec::from_json(&json).unwrap(), spec);
        let text = r#"{"family":"gaussian","params":{"mean":[0.0],"scale":[1.0]},"dim":1}"#;
        assert_eq!(
            DistributionSpec::from_json(text).unwrap(),
            DistributionSpec::gaussian(vec![0.0], vec![1.0])
        );
    }

    #[test]
    fn empirical_weights() {
        let m = empirical(&Sample::from_1d(&[0.0, 1.0]).unwrap());
        assert_eq!(m.weights, vec![0.5, 0.5]);
        let m1 = empirical(&Sample::from_1d(&[4.0]).unwrap());
        assert_eq!(m1.weights, vec![1.0]);
        let dup = empirical(&Sample::from_1d(&[2.0, 2.0, 2.0]).unwrap());
        assert_eq!(dup.len(), 3);
        assert_eq!(dup.origin_index, Some(vec![0, 1, 2]));
    }

    #[test]
    fn augment_cardinality_and_mass() {
        let mu = DiscreteMeasure::from_1d(&[0.0, 1.0, 5.0], vec![0.2, 0.3, 0.5]).unwrap();
        let cfg = SmoothingConfig::new(2.0, 0.7, 1).unwrap();
        let aug = smooth_augment(&mu, &cfg, &seed("a1")).unwrap();
        assert_eq!(aug.len(), 3);
        assert_eq!(aug.weights, mu.weights);

        let cfg = SmoothingConfig::new(2.0, 0.7, 64).unwrap();
        let aug = smooth_augment(&mu, &cfg, &seed("a64")).unwrap();
        aug.validate().unwrap();
        let origin = aug.origin_index.as_ref().unwrap();
        for i in 0..3 {
            let s = compensated_sum(origin.iter().zip(&aug.weights).filter(|(o, _)| **o == i).map(|(_, w)| *w));
            assert!((s - mu.weights[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn augment_point_mass_variance() {
        let mu = DiscreteMeasure::from_1d(&[0.0], vec![1.0]).unwrap();
        let cfg = SmoothingConfig::new(2.0, 1.0, 100_000).unwrap();
        let aug = smooth_augment(&mu, &cfg, &seed("var")).unwrap();
        let v = sample_variance(&aug.coords_1d().unwrap());
        assert!((v - 1.0).abs() < 0.02, "variance {v}");
    }

    #[test]
    fn augment_child_means() {
        let mu = DiscreteMeasure::from_1d(&[-2.0, 3.0], vec![0.5, 0.5]).unwrap();
        let cfg = SmoothingConfig::new(2.0, 0.5, 400).unwrap();
        let aug = smooth_augment(&mu, &cfg, &seed("cm")).unwrap();
        let xs = aug.coords_1d().unwrap();
        for i in 0..2 {
            let m = mean(&xs[i * 400..(i + 1) * 400]);
            assert!((m - mu.points[[i, 0]]).abs() < 4.0 * 0.5 / 20.0);
        }
    }

    #[test]
    fn pool_layout() {
        let x = Sample::from_1d(&[1.0]).unwrap();
        let y = Sample::from_1d(&[2.0]).unwrap();
        let p = pool(&x, &y).unwrap();
        assert_eq!(p.points.column(0).to_vec(), vec![1.0, 2.0]);
        let e = empirical(&pool(&x, &x).unwrap());
        assert_eq!(e.weights, vec![0.5, 0.5]);
        assert!(pool(&x, &Sample::from_1d(&[1.0, 2.0]).unwrap()).is_err());
    }

    #[test]
    fn moment_condition_cases() {
        let cfg = SmoothingConfig::new(2.0, 1.0, 4).unwrap();
        let r = check_moment_condition(&DistributionSpec::uniform(0.0, 1.0), &cfg);
        assert_eq!(r.satisfied, MomentStatus::Satisfied);
        let g = DistributionSpec::gaussian(vec![0.0], vec![1.0]);
        assert_eq!(check_moment_condition(&g, &cfg).satisfied, MomentStatus::Unknown);
        let g2 = g.clone().with_psi2(2.0);
        assert_eq!(check_moment_condition(&g2, &cfg).satisfied, MomentStatus::Violated);
        let g3 = g.with_psi2(0.5);
        assert_eq!(check_moment_condition(&g3, &cfg).satisfied, MomentStatus::Satisfied);
    }

    #[test]
    fn smoothing_config_validation() {
        assert!(SmoothingConfig::new(1.0, 1.0, 4).is_err());
        assert!(SmoothingConfig::new(2.0, 0.0, 4).is_err());
        assert!(SmoothingConfig::new(2.0, 1.0, 0).is_err());
        let c = SmoothingConfig::new(3.0, 1.0, 4).unwrap();
        assert!((1.0 / c.p + 1.0 / c.q - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sample_csv_roundtrip() {
        let spec = DistributionSpec::gaussian(vec![0.0, 0.0], vec![1.0, 1.0]);
        let s = sample(&spec, 7, &seed("csv")).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = Sample::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.points, s.points);
        let headerless = Sample::read_csv("1.5\n2.5\n".as_bytes()).unwrap();
        assert_eq!(headerless.n(), 2);
    }
}
