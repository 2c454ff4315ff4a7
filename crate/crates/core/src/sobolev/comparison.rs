//! Numerical check of `W_p(mu0, mu1) <= p c^{-1/q} ||mu1 - mu0||_{H^{-1,p}(rho)}`
//! when one of the two densities is bounded below by `c rho`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;
use crate::ot::solve_exact;
use crate::stats::compensated_sum;

use super::grid::{Boundary, GridMeasure, GridSigned};
use super::norm::dual_norm;

/// Upper bound on the atoms per measure passed to the exact solver.
pub const MAX_ATOMS: usize = 400;
/// Relative slack absorbing the coarsening error.
pub const SLACK: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub lhs: f64,
    pub rhs: f64,
    pub norm: f64,
    /// `min dmu0/drho` and `min dmu1/drho`.
    pub c0: f64,
    pub c1: f64,
    /// The constant used: `max(c0, c1)`.
    pub c: f64,
    pub holds: bool,
}

pub fn verify_comparison(rho: &GridMeasure, mu0: &GridMeasure, mu1: &GridMeasure, p: f64) -> Result<ComparisonReport> {
    if !(p > 1.0) {
        return Err(Error::Config(format!("p must exceed 1, got {p}")));
    }
    if rho.grid != mu0.grid || rho.grid != mu1.grid {
        return Err(Error::Config("all three measures must share one grid".into()));
    }
    if rho.grid.boundary == Boundary::Periodic {
        return Err(Error::Config("the comparison uses Euclidean transport; use a zero-flux grid".into()));
    }
    let ratio_min = |m: &GridMeasure| {
        m.density
            .iter()
            .zip(&rho.density)
            .map(|(f, r)| f / r)
            .fold(f64::INFINITY, f64::min)
    };
    let (c0, c1) = (ratio_min(mu0), ratio_min(mu1));
    let c = c0.max(c1);
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Config(format!("density lower bound c = {c} must be positive")));
    }
    let q = p / (p - 1.0);
    let norm = dual_norm(rho, &GridSigned::difference(mu1, mu0)?, p)?;
    let rhs = p * c.powf(-1.0 / q) * norm;
    let a = coarsen(mu0, MAX_ATOMS)?;
    let b = coarsen(mu1, MAX_ATOMS)?;
    let lhs = solve_exact(&a, &b, p)?.0.primal_cost.max(0.0).powf(1.0 / p);
    Ok(ComparisonReport {
        lhs,
        rhs,
        norm,
        c0,
        c1,
        c,
        holds: lhs <= rhs * (1.0 + SLACK),
    })
}

/// Merge blocks of neighbouring nodes into single atoms at their mass
/// centroids, so that at most `max_atoms` remain.
pub fn coarsen(m: &GridMeasure, max_atoms: usize) -> Result<DiscreteMeasure> {
    let grid = &m.grid;
    let mut block = 1usize;
    let count = |b: usize| grid.nodes.iter().map(|n| n.div_ceil(b)).product::<usize>();
    while count(block) > max_atoms {
        block += 1;
    }
    let blocks: Vec<usize> = grid.nodes.iter().map(|n| n.div_ceil(block)).collect();
    let nb = blocks.iter().product::<usize>();
    let d = grid.dim;
    let mut mass = vec![0.0; nb];
    let mut moment = vec![vec![0.0; d]; nb];
    let vol = grid.cell_volume();
    for idx in 0..grid.len() {
        let mi = grid.multi_index(idx);
        let mut b = 0;
        let mut stride = 1;
        for a in 0..d {
            b += (mi[a] / block) * stride;
            stride *= blocks[a];
        }
        let w = m.density[idx] * vol;
        mass[b] += w;
        for (a, x) in grid.coords(idx).into_iter().enumerate() {
            moment[b][a] += w * x;
        }
    }
    let total = compensated_sum(mass.iter().copied());
    let mut pts = ndarray::Array2::<f64>::zeros((nb, d));
    for b in 0..nb {
        for a in 0..d {
            pts[[b, a]] = if mass[b] > 0.0 {
                moment[b][a] / mass[b]
            } else {
                // empty block: any location inside it will do
                let k = (b / blocks[..a].iter().product::<usize>()) % blocks[a];
                grid.origin[a] + ((k * block) as f64) * grid.spacing[a]
            };
        }
    }
    DiscreteMeasure::new(pts, mass.iter().map(|w| w / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sobolev::grid::Grid;

    fn bump(grid: &Grid, center: f64) -> GridMeasure {
        GridMeasure::normalized(
            grid.clone(),
            (0..grid.len())
                .map(|i| 0.2 + (-(grid.coords(i)[0] - center).powi(2) / 0.02).exp())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn equal_measures_hold_trivially() {
        let grid = Grid::interval(0.0, 1.0, 100, Boundary::ZeroFlux).unwrap();
        let m = bump(&grid, 0.5);
        let r = verify_comparison(&m, &m, &m, 2.0).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(r.holds);
        assert!((r.c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coarsening_preserves_mass_and_mean() {
        let grid = Grid::interval(0.0, 1.0, 1000, Boundary::ZeroFlux).unwrap();
        let m = bump(&grid, 0.3);
        let c = coarsen(&m, 400).unwrap();
        assert!(c.len() <= 400);
        let mean_fine: f64 = (0..1000).map(|i| grid.coords(i)[0] * m.density[i] * grid.cell_volume()).sum();
        let mean_coarse: f64 = c.points.column(0).iter().zip(&c.weights).map(|(x, w)| x * w).sum();
        assert!((mean_fine - mean_coarse).abs() < 1e-12);
    }

    #[test]
    fn shifted_bumps_satisfy_inequality() {
        let grid = Grid::interval(0.0, 1.0, 200, Boundary::ZeroFlux).unwrap();
        let (a, b) = (bump(&grid, 0.4), bump(&grid, 0.6));
        let rho = GridMeasure::normalized(
            grid.clone(),
            a.density.iter().zip(&b.density).map(|(x, y)| 0.5 * (x + y)).collect(),
        )
        .unwrap();
        for p in [2.0, 3.0] {
            let r = verify_comparison(&rho, &a, &b, p).unwrap();
            assert!(r.holds, "{r:?}");
            assert!(r.lhs > 0.0);
        }
    }

    #[test]
    fn periodic_rejected() {
        let grid = Grid::periodic(0.0, 1.0, 16).unwrap();
        let m = GridMeasure::normalized(grid.clone(), vec![1.0; 16]).unwrap();
        assert!(verify_comparison(&m, &m, &m, 2.0).is_err());
    }
}
