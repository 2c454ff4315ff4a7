//! Small numerical and statistical helpers shared across modules.


use crate::error::{Error, Result};

pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF, accurate in both tails.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Upper tail `1 - Φ(z)` without cancellation.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// Neumaier compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    compensated_sum(values.iter().copied()) / values.len() as f64
}

/// Sample variance with the `1/(n-1)` normalisation; zero for `n < 2`.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    compensated_sum(values.iter().map(|v| (v - m) * (v - m))) / (n - 1) as f64
}

pub fn sort_floats(values: &mut [f64]) {
    values.sort_unstable_by(|a, b| a.total_cmp(b));
}

/// Lower empirical quantile of an ascending slice: `values[ceil(alpha*B) - 1]`,
/// index clamped into range.
pub fn lower_quantile(sorted: &[f64], alpha: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Empty("quantile of an empty distribution".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("quantile level {alpha} outside [0,1]")));
    }
    let b = sorted.len();
    // snap products like 0.7 * 300 that land a rounding error off an integer
    let pos = alpha * b as f64;
    let pos = if (pos - pos.round()).abs() < 1e-9 { pos.round() } else { pos.ceil() };
    let idx = (pos as isize - 1).clamp(0, b as isize - 1) as usize;
    Ok(sorted[idx])
}

/// Two-sample Kolmogorov–Smirnov statistic `sup_t |F_a(t) - F_b(t)|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("ks_two_sample needs two nonempty samples".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("NaN in ks_two_sample input".into()));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    sort_floats(&mut xs);
    sort_floats(&mut ys);
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        // step past every atom at the current location on both sides
        let t = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= t {
            i += 1;
        }
        while j < ys.len() && ys[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// One-sample KS statistic against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(values: &[f64], cdf: F) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("ks_one_sample needs a nonempty sample".into()));
    }
    let mut xs = values.to_vec();
    sort_floats(&mut xs);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}

/// KS distance between a sample and the normal law with the sample's own mean
/// and variance.
pub fn ks_vs_fitted_normal(values: &[f64]) -> Result<f64> {
    let m = mean(values);
    let s = sample_variance(values).sqrt();
    if !(s > 0.0) {
        return Err(Error::DegenerateNull("constant sample has no fitted normal".into()));
    }
    ks_one_sample(values, |x| normal_cdf((x - m) / s))
}
