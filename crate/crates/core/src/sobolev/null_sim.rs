//! Draws from the approximate null limit law `||G||_{H^{-1,p}(mu * gamma)}`
//! through large-n smoothed empirical increments on a grid.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measures::{empirical, sample, DistributionSpec, SmoothingConfig};
use crate::seed::SeedPath;

use super::grid::{project_to_grid, Grid, GridMeasure, GridSigned, GridSource};
use super::norm::dual_norm;

pub const MIN_SURROGATE: usize = 1000;

/// For `r < reps`: `||sqrt(n) (mu_n * gamma - mu * gamma)||` with the norm
/// taken against `rho = mu * gamma`, both densities projected onto `grid`.
/// Replicate `r` draws from `seed / r`; output order is replicate order.
pub fn simulate_null_limit(
    spec: &DistributionSpec,
    cfg: &SmoothingConfig,
    grid: &Grid,
    n_surrogate: usize,
    reps: usize,
    seed: &SeedPath,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if n_surrogate < MIN_SURROGATE {
        return Err(Error::Config(format!(
            "n_surrogate must be at least {MIN_SURROGATE}, got {n_surrogate}"
        )));
    }
    let rho = project_to_grid(GridSource::Spec(spec), cfg.sigma, grid)?;
    (0..reps)
        .into_par_iter()
        .map(|r| null_limit_draw(spec, cfg, &rho, n_surrogate, &seed.child(r)))
        .collect()
}

/// One draw of the approximate limit, given `rho = mu * gamma` on the grid.
pub fn null_limit_draw(
    spec: &DistributionSpec,
    cfg: &SmoothingConfig,
    rho: &GridMeasure,
    n_surrogate: usize,
    seed: &SeedPath,
) -> Result<f64> {
    let grid = &rho.grid;
    let x = sample(spec, n_surrogate, seed)?;
    let emp = project_to_grid(GridSource::Measure(&empirical(&x)), cfg.sigma, grid)?;
    let scale = (n_surrogate as f64).sqrt();
    let h = GridSigned::new(
        grid.clone(),
        emp.density
            .iter()
            .zip(&rho.density)
            .map(|(a, b)| scale * (a - b))
            .collect(),
    )?;
    dual_norm(rho, &h, cfg.p)
}
