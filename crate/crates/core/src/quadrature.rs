//! Deterministic smooth distances on the line.
//!
//! `mu * N(0, sigma^2)` is a Gaussian mixture, so in one dimension its CDF can
//! be tabulated on a fine grid and `W_p` read off the quantile functions with
//! no augmentation noise. Atoms are spread onto the grid by linear binning
//! (mass and mean preserved), then convolved with a tabulated normal CDF.

use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;
use crate::stats::normal_cdf;

/// Grid spacing as a fraction of `sigma`.
pub const STEPS_PER_SIGMA: f64 = 200.0;
/// Kernel half-width in units of `sigma`; beyond it the normal CDF is 0 or 1.
pub const KERNEL_SIGMAS: f64 = 9.0;

/// A grid `lo + k h`, `k < nodes`, with the normal CDF kernel for one `sigma`.
#[derive(Debug, Clone)]
pub struct LineQuadrature {
    pub lo: f64,
    pub h: f64,
    pub nodes: usize,
    pub sigma: f64,
    half: usize,
    /// `Phi(d h / sigma)` for `d = -half..=half`.
    kernel: Vec<f64>,
}

impl LineQuadrature {
    pub fn new(lo: f64, hi: f64, sigma: f64, h: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config("quadrature needs a positive finite sigma".into()));
        }
        if !(h > 0.0) || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config("quadrature needs lo < hi and h > 0".into()));
        }
        let nodes = ((hi - lo) / h).ceil() as usize + 1;
        let half = (KERNEL_SIGMAS * sigma / h).ceil() as usize;
        let kernel = (0..=2 * half)
            .map(|i| normal_cdf((i as f64 - half as f64) * h / sigma))
            .collect();
        Ok(LineQuadrature {
            lo,
            h,
            nodes,
            sigma,
            half,
            kernel,
        })
    }

    /// Grid wide enough for both measures, with the default spacing.
    pub fn covering(measures: &[&DiscreteMeasure], sigma: f64) -> Result<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for m in measures {
            for &x in &m.coords_1d()? {
                lo = lo.min(x);
                hi = hi.max(x);
            }
        }
        if !lo.is_finite() {
            return Err(Error::Empty("no atoms to cover".into()));
        }
        let pad = KERNEL_SIGMAS * sigma;
        Self::new(lo - pad, hi + pad, sigma, sigma / STEPS_PER_SIGMA)
    }

    pub fn node(&self, k: usize) -> f64 {
        self.lo + k as f64 * self.h
    }

    /// CDF of `mu * N(0, sigma^2)` at every node, pinned to 0 and 1 at the ends.
    pub fn cdf(&self, mu: &DiscreteMeasure) -> Result<Vec<f64>> {
        let xs = mu.coords_1d()?;
        let n = self.nodes;
        let mut bins = vec![0.0; n];
        for (&x, &w) in xs.iter().zip(&mu.weights) {
            let t = (x - self.lo) / self.h;
            if !(t >= 0.0 && t <= (n - 1) as f64) {
                return Err(Error::Config(format!("atom {x} lies outside the quadrature grid")));
            }
            let k = (t.floor() as usize).min(n - 2);
            let frac = t - k as f64;
            bins[k] += w * (1.0 - frac);
            bins[k + 1] += w * frac;
        }
        // bins at least `half` nodes below k contribute their whole mass
        let mut below = vec![0.0; n + 1];
        for j in 0..n {
            below[j + 1] = below[j] + bins[j];
        }
        let half = self.half;
        let mut cdf = Vec::with_capacity(n);
        let mut running: f64 = 0.0;
        for k in 0..n {
            let first = k.saturating_sub(half);
            let last = (k + half).min(n - 1);
            let mut v = below[first];
            for (j, b) in bins.iter().enumerate().take(last + 1).skip(first) {
                if *b != 0.0 {
                    v += b * self.kernel[k + half - j];
                }
            }
            running = running.max(v);
            cdf.push(running);
        }
        let total = below[n];
        for v in &mut cdf {
            *v = (*v / total).min(1.0);
        }
        cdf[0] = 0.0;
        cdf[n - 1] = 1.0;
        Ok(cdf)
    }

    /// `W_p` between the laws whose node CDFs are `f` and `g`, interpolating
    /// both CDFs linearly between nodes.
    pub fn quantile_distance(&self, f: &[f64], g: &[f64], p: f64) -> f64 {
        let n = self.nodes;
        let inverse = |c: &[f64], k: usize, u: f64| self.node(k) + self.h * (u - c[k]) / (c[k + 1] - c[k]);
        let (mut i, mut j) = (0, 0);
        let mut u = 0.0;
        let mut total = 0.0;
        loop {
            while i + 1 < n && f[i + 1] <= u {
                i += 1;
            }
            while j + 1 < n && g[j + 1] <= u {
                j += 1;
            }
            if i + 1 >= n || j + 1 >= n {
                break;
            }
            let next = f[i + 1].min(g[j + 1]);
            let d0 = inverse(f, i, u) - inverse(g, j, u);
            let d1 = inverse(f, i, next) - inverse(g, j, next);
            total += (next - u) * power_mean(d0, d1, p);
            u = next;
        }
        total.max(0.0).powf(1.0 / p)
    }
}

/// Average of `|d|^p` over a segment on which `d` moves linearly from `d0` to `d1`.
fn power_mean(d0: f64, d1: f64, p: f64) -> f64 {
    let spread = d1 - d0;
    if spread.abs() <= 1e-9 * (d0.abs() + d1.abs()) {
        return (0.5 * (d0 + d1)).abs().powf(p);
    }
    let anti = |d: f64| d * d.abs().powf(p);
    (anti(d1) - anti(d0)) / ((p + 1.0) * spread)
}

/// `W_p(mu * N(0, sigma^2), nu * N(0, sigma^2))` for measures on the line.
pub fn smooth_wasserstein_1d(mu: &DiscreteMeasure, nu: &DiscreteMeasure, sigma: f64, p: f64) -> Result<f64> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::Config("p must be finite and at least 1".into()));
    }
    mu.validate()?;
    nu.validate()?;
    let q = LineQuadrature::covering(&[mu, nu], sigma)?;
    let (f, g) = (q.cdf(mu)?, q.cdf(nu)?);
    Ok(q.quantile_distance(&f, &g, p))
}
