//! Minimum smooth-distance estimation over simple parametric families.
//!
//! The objective `theta -> W(mu_n * gamma, nu_theta * gamma)` is evaluated
//! with common random numbers: the model sample at `theta` is one frozen base
//! draw pushed through `theta`, and both sides reuse frozen noise tensors.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{line_distance, LineCloud};
use crate::harness::{run_replications, ReplicationReport};
use crate::measures::{augment_with, empirical, sample, DistributionSpec, NoiseTensor, Sample, SmoothingConfig};
use crate::ot::solve_exact;
use crate::seed::SeedPath;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilyKind {
    /// `N(theta, scale^2 I)`.
    GaussianLocation { scale: f64 },
    /// `N(theta[..d], theta[d]^2 I)`.
    GaussianLocationScale,
    /// Uniform on the cube of side `width` centred at `theta`.
    UniformLocation { width: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricFamily {
    #[serde(flatten)]
    pub kind: FamilyKind,
    pub dim: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParametricFamily {
    pub fn new(kind: FamilyKind, dim: usize, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let fam = ParametricFamily { kind, dim, lower, upper };
        fam.validate()?;
        Ok(fam)
    }

    pub fn gaussian_location(scale: f64, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let d = lower.len();
        Self::new(FamilyKind::GaussianLocation { scale }, d, lower, upper)
    }

    /// Parameter dimension `d0`.
    pub fn param_dim(&self) -> usize {
        match self.kind {
            FamilyKind::GaussianLocationScale => self.dim + 1,
            _ => self.dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > crate::measures::MAX_DIM {
            return Err(Error::Config(format!("family dimension {} unsupported", self.dim)));
        }
        let d0 = self.param_dim();
        if self.lower.len() != d0 || self.upper.len() != d0 {
            return Err(Error::Dimension(format!(
                "parameter box needs {d0} bounds per side, got {} and {}",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (a, b) in self.lower.iter().zip(&self.upper) {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::Config(format!("parameter box side [{a}, {b}] has empty interior")));
            }
        }
        match self.kind {
            FamilyKind::GaussianLocation { scale } if !(scale > 0.0 && scale.is_finite()) => {
                Err(Error::Config(format!("scale must be positive, got {scale}")))
            }
            FamilyKind::UniformLocation { width } if !(width > 0.0 && width.is_finite()) => {
                Err(Error::Config(format!("width must be positive, got {width}")))
            }
            FamilyKind::GaussianLocationScale if !(self.lower[self.dim] > 0.0) => {
                Err(Error::Config("the scale coordinate of the box must stay positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.param_dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (a, b))| a <= t && t <= b)
    }

    /// The law `nu_theta`.
    pub fn spec(&self, theta: &[f64]) -> Result<DistributionSpec> {
        if theta.len() != self.param_dim() {
            return Err(Error::Dimension(format!("theta has {} entries, expected {}", theta.len(), self.param_dim())));
        }
        let d = self.dim;
        let spec = match self.kind {
            FamilyKind::GaussianLocation { scale } => DistributionSpec::gaussian(theta.to_vec(), vec![scale; d]),
            FamilyKind::GaussianLocationScale => DistributionSpec::gaussian(theta[..d].to_vec(), vec![theta[d]; d]),
            FamilyKind::UniformLocation { width } => DistributionSpec::uniform_box(
                theta.iter().map(|t| t - width / 2.0).collect(),
                theta.iter().map(|t| t + width / 2.0).collect(),
            ),
        };
        spec.validate()?;
        Ok(spec)
    }

    fn base_draws(&self, n: usize, seed: &SeedPath) -> Vec<f64> {
        let mut rng = seed.rng();
        let total = n * self.dim;
        match self.kind {
            FamilyKind::UniformLocation { .. } => (0..total).map(|_| rng.random::<f64>() - 0.5).collect(),
            _ => (0..total).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        }
    }

    /// Push base draws through `theta`, row-major `n x dim`.
    fn transform(&self, base: &[f64], theta: &[f64]) -> Vec<f64> {
        let d = self.dim;
        base.iter()
            .enumerate()
            .map(|(k, b)| {
                let a = k % d;
                match self.kind {
                    FamilyKind::GaussianLocation { scale } => theta[a] + scale * b,
                    FamilyKind::GaussianLocationScale => theta[a] + theta[d] * b,
                    FamilyKind::UniformLocation { width } => theta[a] + width * b,
                }
            })
            .collect()
    }

    fn is_location(&self) -> bool {
        !matches!(self.kind, FamilyKind::GaussianLocationScale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdeOptions {
    /// Simplex diameter at which a start counts as converged.
    pub xtol: f64,
    /// Objective tolerance used by callers comparing optimal values.
    pub ftol: f64,
    pub max_evals: usize,
    pub starts: usize,
}

impl Default for MdeOptions {
    fn default() -> Self {
        MdeOptions {
            xtol: 1e-7,
            ftol: 1e-6,
            max_evals: 1000,
            starts: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub start: usize,
    pub theta: Vec<f64>,
    pub value: f64,
    pub best_so_far: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdeResult {
    pub theta_hat: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub evaluations: usize,
    pub optimizer_trace: Vec<TraceEntry>,
}

/// The frozen-randomness objective for one data set.
pub struct MdeObjective {
    family: ParametricFamily,
    cfg: SmoothingConfig,
    base: Vec<f64>,
    n_model: usize,
    model_noise: NoiseTensor,
    data: Sample,
    data_line: Option<LineCloud>,
    data_noise: NoiseTensor,
    /// Model cloud at `theta = 0`, for location families on the line.
    base_line: Option<LineCloud>,
}

impl MdeObjective {
    pub fn new(x: &Sample, family: &ParametricFamily, cfg: &SmoothingConfig, n_model: usize, seed: &SeedPath) -> Result<Self> {
        family.validate()?;
        cfg.validate()?;
        if x.dim() != family.dim {
            return Err(Error::Dimension(format!("data has d = {}, family has d = {}", x.dim(), family.dim)));
        }
        if n_model == 0 || x.n() == 0 {
            return Err(Error::Empty("MDE needs data and a nonempty model sample".into()));
        }
        let d = family.dim;
        let base = family.base_draws(n_model, &seed.child("model-base"));
        let model_noise = NoiseTensor::draw(n_model, cfg.m, d, &seed.child("model-noise"));
        let data_noise = NoiseTensor::draw(x.n(), cfg.m, d, &seed.child("data-noise"));
        let data_line = if d == 1 { Some(LineCloud::new(x, &data_noise, cfg.sigma)?) } else { None };
        let mut obj = MdeObjective {
            family: family.clone(),
            cfg: *cfg,
            base,
            n_model,
            model_noise,
            data: x.clone(),
            data_line,
            data_noise,
            base_line: None,
        };
        if d == 1 && family.is_location() {
            let zero = vec![0.0; family.param_dim()];
            obj.base_line = Some(obj.model_line(&zero)?);
        }
        Ok(obj)
    }

    fn model_sample(&self, theta: &[f64]) -> Result<Sample> {
        let pts = ndarray::Array2::from_shape_vec((self.n_model, self.family.dim), self.family.transform(&self.base, theta))
            .map_err(|e| Error::Dimension(e.to_string()))?;
        Sample::new(pts)
    }

    fn model_line(&self, theta: &[f64]) -> Result<LineCloud> {
        LineCloud::new(&self.model_sample(theta)?, &self.model_noise, self.cfg.sigma)
    }

    /// `W(mu_n * gamma, nu_theta * gamma)` under the frozen randomness.
    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.family.param_dim() {
            return Err(Error::Dimension("theta has the wrong length".into()));
        }
        if let Some(a) = &self.data_line {
            let b = match &self.base_line {
                Some(base) => base.shifted(theta[0]),
                None => self.model_line(theta)?,
            };
            return Ok(line_distance(a, &a.uniform_weights(), &b, &b.uniform_weights(), self.cfg.p));
        }
        let ax = augment_with(&empirical(&self.data), &self.data_noise, self.cfg.sigma)?;
        let ay = augment_with(&empirical(&self.model_sample(theta)?), &self.model_noise, self.cfg.sigma)?;
        Ok(solve_exact(&ax, &ay, self.cfg.p)?.0.primal_cost.max(0.0).powf(1.0 / self.cfg.p))
    }
}

/// Fit `argmin_theta W(mu_n, nu_theta)` over the family's box.
pub fn fit_mde(
    x: &Sample,
    family: &ParametricFamily,
    cfg: &SmoothingConfig,
    n_model: usize,
    opts: &MdeOptions,
    seed: &SeedPath,
) -> Result<MdeResult> {
    let obj = MdeObjective::new(x, family, cfg, n_model, seed)?;
    minimize(&obj, opts)
}

/// Multistart Nelder–Mead over the box of `obj`'s family.
pub fn minimize(obj: &MdeObjective, opts: &MdeOptions) -> Result<MdeResult> {
    let fam = &obj.family;
    if opts.starts == 0 || opts.max_evals < fam.param_dim() + 1 {
        return Err(Error::Config("need at least one start and d0 + 1 evaluations".into()));
    }
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut converged = false;
    for s in 0..opts.starts {
        let start = halton_point(s + 1, &fam.lower, &fam.upper);
        let mut failure = None;
        let run = nelder_mead(
            |theta| match obj.value(theta) {
                Ok(v) => {
                    let bsf = trace.last().map_or(v, |t: &TraceEntry| t.best_so_far.min(v));
                    trace.push(TraceEntry {
                        start: s,
                        theta: theta.to_vec(),
                        value: v,
                        best_so_far: bsf,
                    });
                    v
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::INFINITY
                }
            },
            start,
            &fam.lower,
            &fam.upper,
            opts,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        if best.as_ref().is_none_or(|(_, v)| run.value < *v) {
            best = Some((run.x, run.value));
            converged = run.converged;
        }
    }
    let (theta_hat, value) = best.expect("at least one start");
    Ok(MdeResult {
        theta_hat,
        value,
        converged,
        evaluations: trace.len(),
        optimizer_trace: trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MdeExperimentKind {
    /// Rows `sqrt(n) (theta_hat - theta*)` per coordinate.
    Limit,
    /// Rows `sqrt(n) inf_theta W(mu_n, nu_theta)`, next to the same scaled
    /// objective at `theta*`.
    Value,
}

/// `R` fits on fresh data from `nu_{theta*}`, default options with
/// `ftol = 1e-4 / sqrt(n)`, on the global thread pool size.
pub fn mde_limit_experiment(
    family: &ParametricFamily,
    theta_star: &[f64],
    cfg: &SmoothingConfig,
    n: usize,
    reps: usize,
    seed: &SeedPath,
) -> Result<ReplicationReport> {
    let opts = MdeOptions {
        ftol: 1e-4 / (n as f64).sqrt(),
        ..MdeOptions::default()
    };
    let threads = rayon::current_num_threads();
    mde_experiment(MdeExperimentKind::Limit, family, theta_star, cfg, n, n, &opts, reps, threads, seed)
}

pub fn mde_value_experiment(
    family: &ParametricFamily,
    theta_star: &[f64],
    cfg: &SmoothingConfig,
    n: usize,
    reps: usize,
    seed: &SeedPath,
) -> Result<ReplicationReport> {
    let opts = MdeOptions {
        ftol: 1e-4 / (n as f64).sqrt(),
        ..MdeOptions::default()
    };
    let threads = rayon::current_num_threads();
    mde_experiment(MdeExperimentKind::Value, family, theta_star, cfg, n, n, &opts, reps, threads, seed)
}

#[allow(clippy::too_many_arguments)]
pub fn mde_experiment(
    kind: MdeExperimentKind,
    family: &ParametricFamily,
    theta_star: &[f64],
    cfg: &SmoothingConfig,
    n: usize,
    n_model: usize,
    opts: &MdeOptions,
    reps: usize,
    parallelism: usize,
    seed: &SeedPath,
) -> Result<ReplicationReport> {
    family.validate()?;
    if !family.contains(theta_star) {
        return Err(Error::Config("theta_star must lie in the parameter box".into()));
    }
    let truth = family.spec(theta_star)?;
    let d0 = family.param_dim();
    let scale = (n as f64).sqrt();
    let columns: Vec<String> = match kind {
        MdeExperimentKind::Limit => (0..d0)
            .map(|a| format!("dev_{a}"))
            .chain(["value".to_string(), "converged".to_string()])
            .collect(),
        MdeExperimentKind::Value => vec!["value".into(), "value_at_truth".into(), "converged".into()],
    };
    run_replications(columns, reps, parallelism, seed, |_, s| {
        let x = sample(&truth, n, &s.child("data"))?;
        let obj = MdeObjective::new(&x, family, cfg, n_model, &s.child("fit"))?;
        let fit = minimize(&obj, opts)?;
        let converged = f64::from(u8::from(fit.converged));
        Ok(match kind {
            MdeExperimentKind::Limit => fit
                .theta_hat
                .iter()
                .zip(theta_star)
                .map(|(t, t0)| scale * (t - t0))
                .chain([scale * fit.value, converged])
                .collect(),
            MdeExperimentKind::Value => vec![scale * fit.value, scale * obj.value(theta_star)?, converged],
        })
    })
}

/// Point `index` of the Halton sequence mapped into the box.
pub fn halton_point(index: usize, lower: &[f64], upper: &[f64]) -> Vec<f64> {
    const PRIMES: [usize; 6] = [2, 3, 5, 7, 11, 13];
    lower
        .iter()
        .zip(upper)
        .enumerate()
        .map(|(a, (lo, hi))| {
            let base = PRIMES[a % PRIMES.len()];
            let (mut f, mut r, mut i) = (1.0, 0.0, index);
            while i > 0 {
                f /= base as f64;
                r += f * (i % base) as f64;
                i /= base;
            }
            lo + r * (hi - lo)
        })
        .collect()
}

struct NmRun {
    x: Vec<f64>,
    value: f64,
    converged: bool,
}

/// Reflect a coordinate back across the violated face, then clamp.
fn into_box(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        if *v < *lo {
            *v = lo + (lo - *v);
        } else if *v > *hi {
            *v = hi - (*v - hi);
        }
        *v = v.clamp(*lo, *hi);
    }
}

fn nelder_mead<F>(mut f: F, start: Vec<f64>, lower: &[f64], upper: &[f64], opts: &MdeOptions) -> NmRun
where
    F: FnMut(&[f64]) -> f64,
{
    let d = start.len();
    let mut simplex = vec![start.clone()];
    for a in 0..d {
        let mut v = start.clone();
        let step = 0.1 * (upper[a] - lower[a]);
        v[a] += if v[a] + step <= upper[a] { step } else { -step };
        into_box(&mut v, lower, upper);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut evals = d + 1;
    let mut converged = false;
    let point = |base: &[f64], toward: &[f64], t: f64| -> Vec<f64> {
        let mut v: Vec<f64> = base.iter().zip(toward).map(|(b, c)| b + t * (c - b)).collect();
        into_box(&mut v, lower, upper);
        v
    };
    loop {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let diameter = simplex[1..]
            .iter()
            .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if diameter < opts.xtol {
            converged = true;
            break;
        }
        if evals >= opts.max_evals {
            break;
        }
        let mut centroid = vec![0.0; d];
        for v in &simplex[..d] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / d as f64;
            }
        }
        let worst = simplex[d].clone();
        let reflected = point(&worst, &centroid, 2.0);
        let fr = f(&reflected);
        evals += 1;
        if fr < values[0] {
            let expanded = point(&worst, &centroid, 3.0);
            let fe = f(&expanded);
            evals += 1;
            if fe < fr {
                simplex[d] = expanded;
                values[d] = fe;
            } else {
                simplex[d] = reflected;
                values[d] = fr;
            }
        } else if fr < values[d - 1] {
            simplex[d] = reflected;
            values[d] = fr;
        } else {
            let (contracted, fc) = if fr < values[d] {
                let c = point(&centroid, &reflected, 0.5);
                let v = f(&c);
                (c, v)
            } else {
                let c = point(&centroid, &worst, 0.5);
                let v = f(&c);
                (c, v)
            };
            evals += 1;
            if fc < values[d].min(fr) {
                simplex[d] = contracted;
                values[d] = fc;
            } else {
                for k in 1..=d {
                    simplex[k] = point(&simplex[0].clone(), &simplex[k], 0.5);
                    values[k] = f(&simplex[k]);
                }
                evals += d;
            }
        }
    }
    NmRun {
        x: simplex[0].clone(),
        value: values[0],
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fam() -> ParametricFamily {
        ParametricFamily::gaussian_location(1.0, vec![-2.0], vec![4.0]).unwrap()
    }

    #[test]
    fn box_validation() {
        assert!(ParametricFamily::gaussian_location(1.0, vec![1.0], vec![1.0]).is_err());
        assert!(ParametricFamily::gaussian_location(0.0, vec![0.0], vec![1.0]).is_err());
        assert!(ParametricFamily::new(FamilyKind::GaussianLocationScale, 1, vec![0.0, -1.0], vec![1.0, 2.0]).is_err());
        let f = ParametricFamily::new(FamilyKind::GaussianLocationScale, 2, vec![0.0, 0.0, 0.1], vec![1.0, 1.0, 2.0]).unwrap();
        assert_eq!(f.param_dim(), 3);
    }

    #[test]
    fn nelder_mead_quadratic_in_box() {
        let opts = MdeOptions::default();
        let run = nelder_mead(
            |t| (t[0] - 0.3).powi(2) + 2.0 * (t[1] + 0.7).powi(2),
            vec![0.9, 0.9],
            &[-1.0, -1.0],
            &[1.0, 1.0],
            &opts,
        );
        assert!(run.converged);
        assert!((run.x[0] - 0.3).abs() < 1e-6 && (run.x[1] + 0.7).abs() < 1e-6);
        // minimizer outside the box lands on the face
        let run = nelder_mead(|t| (t[0] - 3.0).powi(2), vec![0.0], &[-1.0], &[1.0], &opts);
        assert!((run.x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn location_fit_recovers_mean_shift() {
        let cfg = SmoothingConfig::new(2.0, 0.5, 8).unwrap();
        let x = sample(&fam().spec(&[1.5]).unwrap(), 400, &SeedPath::root(1)).unwrap();
        let r = fit_mde(&x, &fam(), &cfg, 400, &MdeOptions::default(), &SeedPath::root(2)).unwrap();
        assert!(r.converged);
        assert!((r.theta_hat[0] - 1.5).abs() < 0.3);
        assert!(fam().contains(&r.theta_hat));
        assert!(r.optimizer_trace.windows(2).all(|w| w[1].best_so_far <= w[0].best_so_far));
        assert_eq!(r.optimizer_trace.last().unwrap().best_so_far, r.value);
        let again = fit_mde(&x, &fam(), &cfg, 400, &MdeOptions::default(), &SeedPath::root(2)).unwrap();
        assert_eq!(again.theta_hat, r.theta_hat);
    }

    #[test]
    fn shifted_location_family_matches_direct_model() {
        let cfg = SmoothingConfig::new(2.0, 0.5, 4).unwrap();
        let x = sample(&fam().spec(&[0.2]).unwrap(), 50, &SeedPath::root(7)).unwrap();
        let obj = MdeObjective::new(&x, &fam(), &cfg, 50, &SeedPath::root(8)).unwrap();
        let direct = {
            let a = obj.data_line.as_ref().unwrap();
            let b = obj.model_line(&[0.8]).unwrap();
            line_distance(a, &a.uniform_weights(), &b, &b.uniform_weights(), 2.0)
        };
        assert!((obj.value(&[0.8]).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn optimum_stays_in_box() {
        let cfg = SmoothingConfig::new(2.0, 0.5, 4).unwrap();
        let narrow = ParametricFamily::gaussian_location(1.0, vec![-1.0], vec![0.5]).unwrap();
        let x = sample(&fam().spec(&[3.0]).unwrap(), 100, &SeedPath::root(3)).unwrap();
        let r = fit_mde(&x, &narrow, &cfg, 100, &MdeOptions::default(), &SeedPath::root(4)).unwrap();
        assert!(narrow.contains(&r.theta_hat));
        assert!(r.optimizer_trace.iter().all(|t| narrow.contains(&t.theta)));
        assert!((r.theta_hat[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn location_scale_and_uniform_fit() {
        let cfg = SmoothingConfig::new(2.0, 0.3, 4).unwrap();
        let ls = ParametricFamily::new(FamilyKind::GaussianLocationScale, 1, vec![-2.0, 0.2], vec![2.0, 3.0]).unwrap();
        let x = sample(&ls.spec(&[0.5, 1.5]).unwrap(), 500, &SeedPath::root(5)).unwrap();
        let r = fit_mde(&x, &ls, &cfg, 500, &MdeOptions::default(), &SeedPath::root(6)).unwrap();
        assert!((r.theta_hat[0] - 0.5).abs() < 0.3 && (r.theta_hat[1] - 1.5).abs() < 0.3, "{:?}", r.theta_hat);
        let un = ParametricFamily::new(FamilyKind::UniformLocation { width: 1.0 }, 1, vec![-2.0], vec![2.0]).unwrap();
        let x = sample(&un.spec(&[-0.4]).unwrap(), 500, &SeedPath::root(5)).unwrap();
        let r = fit_mde(&x, &un, &cfg, 500, &MdeOptions::default(), &SeedPath::root(6)).unwrap();
        assert!((r.theta_hat[0] + 0.4).abs() < 0.1);
    }
}
