//! Regular 1-D/2-D grids, grid densities and signed grid functions, and
//! projection of smoothed measures onto grid nodes.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, DistributionSpec};
use crate::stats::{compensated_sum, normal_cdf, normal_pdf, normal_sf};

pub const BOUNDARY_MASS_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Periodic,
    ZeroFlux,
}

/// Node-centered grid: node `k` on axis `a` sits at `origin[a] + k * spacing[a]`
/// and owns the cell of width `spacing[a]` around it. Node index is
/// `i0 + nodes[0] * i1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub nodes: Vec<usize>,
    pub spacing: Vec<f64>,
    pub origin: Vec<f64>,
    pub boundary: Boundary,
}

/// Edge between neighbouring nodes `a -> b` along `axis`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub axis: usize,
}

impl Grid {
    pub fn new(nodes: Vec<usize>, spacing: Vec<f64>, origin: Vec<f64>, boundary: Boundary) -> Result<Self> {
        let g = Grid {
            dim: nodes.len(),
            nodes,
            spacing,
            origin,
            boundary,
        };
        g.validate()?;
        Ok(g)
    }

    /// 1-D grid whose cells tile `[lo, hi]` exactly.
    pub fn interval(lo: f64, hi: f64, nodes: usize, boundary: Boundary) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::Config("grid interval must have hi > lo".into()));
        }
        let h = (hi - lo) / nodes as f64;
        Self::new(vec![nodes], vec![h], vec![lo + 0.5 * h], boundary)
    }

    /// 1-D periodic grid on `[lo, hi)` with a node at `lo`.
    pub fn periodic(lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        let h = (hi - lo) / nodes as f64;
        Self::new(vec![nodes], vec![h], vec![lo], Boundary::Periodic)
    }

    /// 2-D grid whose cells tile `[lo0, hi0] x [lo1, hi1]`.
    pub fn rectangle(lo: [f64; 2], hi: [f64; 2], nodes: [usize; 2], boundary: Boundary) -> Result<Self> {
        let h0 = (hi[0] - lo[0]) / nodes[0] as f64;
        let h1 = (hi[1] - lo[1]) / nodes[1] as f64;
        Self::new(
            nodes.to_vec(),
            vec![h0, h1],
            vec![lo[0] + 0.5 * h0, lo[1] + 0.5 * h1],
            boundary,
        )
    }

    /// Grid whose cells tile the box `lower..upper` (1-D or 2-D).
    pub fn from_box(lower: &[f64], upper: &[f64], nodes: &[usize], boundary: Boundary) -> Result<Self> {
        match (lower, upper, nodes) {
            ([lo], [hi], [n]) => Self::interval(*lo, *hi, *n, boundary),
            ([lo0, lo1], [hi0, hi1], [n0, n1]) => {
                if !(hi0 > lo0 && hi1 > lo1) {
                    return Err(Error::Config("grid box must have upper > lower".into()));
                }
                Self::rectangle([*lo0, *lo1], [*hi0, *hi1], [*n0, *n1], boundary)
            }
            _ => Err(Error::Dimension("grid box needs 1 or 2 matching coordinates".into())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 1 && self.dim != 2 {
            return Err(Error::Config(format!("grid dim must be 1 or 2, got {}", self.dim)));
        }
        if self.spacing.len() != self.dim || self.origin.len() != self.dim {
            return Err(Error::Config("grid spacing/origin length must equal dim".into()));
        }
        if self.nodes.iter().any(|&n| n < 4) {
            return Err(Error::Config("grids need at least 4 nodes per axis".into()));
        }
        if self.spacing.iter().any(|&h| !(h > 0.0) || !h.is_finite()) {
            return Err(Error::Config("grid spacing must be positive".into()));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Config("grid origin must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Per-axis multi-index of node `idx`.
    pub fn multi_index(&self, idx: usize) -> Vec<usize> {
        let mut rest = idx;
        self.nodes
            .iter()
            .map(|&n| {
                let k = rest % n;
                rest /= n;
                k
            })
            .collect()
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .iter()
            .enumerate()
            .map(|(a, &k)| self.origin[a] + k as f64 * self.spacing[a])
            .collect()
    }

    /// Node coordinates along one axis.
    pub fn axis_coords(&self, axis: usize) -> Vec<f64> {
        (0..self.nodes[axis])
            .map(|k| self.origin[axis] + k as f64 * self.spacing[axis])
            .collect()
    }

    /// Outer faces of the boundary cells, per axis.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let lo = (0..self.dim).map(|a| self.origin[a] - 0.5 * self.spacing[a]).collect();
        let hi = (0..self.dim)
            .map(|a| self.origin[a] + (self.nodes[a] as f64 - 0.5) * self.spacing[a])
            .collect();
        (lo, hi)
    }

    fn stride(&self, axis: usize) -> usize {
        self.nodes[..axis].iter().product()
    }

    /// All edges: axis 0 first, then axis 1; within an axis in node order,
    /// with the periodic wrap edges last.
    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::new();
        for axis in 0..self.dim {
            let stride = self.stride(axis);
            let n = self.nodes[axis];
            let mut wrap = Vec::new();
            for idx in 0..self.len() {
                let k = (idx / stride) % n;
                if k + 1 < n {
                    out.push(Edge {
                        a: idx,
                        b: idx + stride,
                        axis,
                    });
                } else if self.boundary == Boundary::Periodic {
                    wrap.push(Edge {
                        a: idx,
                        b: idx - k * stride,
                        axis,
                    });
                }
            }
            out.extend(wrap);
        }
        out
    }
}

/// Probability density on grid nodes (units 1/volume).
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure {
    pub grid: Grid,
    pub density: Vec<f64>,
}

/// Mass-zero signed grid function.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSigned {
    pub grid: Grid,
    pub values: Vec<f64>,
}

/// Edge values of a discrete gradient, grouped by axis in [`Grid::edges`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub grid: Grid,
    pub components: Vec<Vec<f64>>,
}

impl GridMeasure {
    pub fn new(grid: Grid, density: Vec<f64>) -> Result<Self> {
        let m = GridMeasure { grid, density };
        m.validate()?;
        Ok(m)
    }

    /// Rescale a nonnegative grid function to unit mass.
    pub fn normalized(grid: Grid, mut density: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if density.len() != grid.len() {
            return Err(Error::Size("density length differs from node count".into()));
        }
        if density.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("density must be finite and nonnegative".into()));
        }
        let total = compensated_sum(density.iter().copied()) * grid.cell_volume();
        if !(total > 0.0) {
            return Err(Error::Config("density has zero mass on the grid".into()));
        }
        density.iter_mut().for_each(|v| *v /= total);
        Self::new(grid, density)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.density.len() != self.grid.len() {
            return Err(Error::Size("density length differs from node count".into()));
        }
        if self.density.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("density must be finite and nonnegative".into()));
        }
        let mass = self.mass();
        if (mass - 1.0).abs() > 1e-10 {
            return Err(Error::Config(format!("grid density has mass {mass}, not 1")));
        }
        Ok(())
    }

    pub fn mass(&self) -> f64 {
        compensated_sum(self.density.iter().copied()) * self.grid.cell_volume()
    }

    pub fn min_density(&self) -> f64 {
        self.density.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Node masses as a discrete measure on node coordinates.
    pub fn to_discrete(&self) -> Result<DiscreteMeasure> {
        let v = self.grid.cell_volume();
        let n = self.grid.len();
        let d = self.grid.dim;
        let mut pts = ndarray::Array2::<f64>::zeros((n, d));
        for idx in 0..n {
            for (a, c) in self.grid.coords(idx).into_iter().enumerate() {
                pts[[idx, a]] = c;
            }
        }
        let mut w: Vec<f64> = self.density.iter().map(|f| f * v).collect();
        let total = compensated_sum(w.iter().copied());
        w.iter_mut().for_each(|x| *x /= total);
        DiscreteMeasure::new(pts, w)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_grid_csv(&self.grid, &self.density, w)
    }
}

impl GridSigned {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::Size("value length differs from node count".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid function must be finite".into()));
        }
        let mass = compensated_sum(values.iter().copied()) * grid.cell_volume();
        if mass.abs() > 1e-8 {
            return Err(Error::Config(format!("signed grid function has mass {mass:.3e}, not 0")));
        }
        Ok(GridSigned { grid, values })
    }

    /// `a - b` for two densities on the same grid.
    pub fn difference(a: &GridMeasure, b: &GridMeasure) -> Result<Self> {
        if a.grid != b.grid {
            return Err(Error::Config("measures live on different grids".into()));
        }
        Self::new(
            a.grid.clone(),
            a.density.iter().zip(&b.density).map(|(x, y)| x - y).collect(),
        )
    }

    pub fn scaled(&self, s: f64) -> GridSigned {
        GridSigned {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_grid_csv(&self.grid, &self.values, w)
    }
}

/// One row per node: coordinates then the value.
pub fn write_grid_csv<W: Write>(grid: &Grid, values: &[f64], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (0..grid.dim).map(|a| format!("x{a}")).collect();
    header.push("value".into());
    wr.write_record(&header)?;
    for (idx, v) in values.iter().enumerate() {
        let mut row: Vec<String> = grid.coords(idx).iter().map(|c| c.to_string()).collect();
        row.push(v.to_string());
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// What to smooth onto a grid.
#[derive(Debug, Clone, Copy)]
pub enum GridSource<'a> {
    Spec(&'a DistributionSpec),
    Measure(&'a DiscreteMeasure),
}

/// Node values of the density of `source * N(0, sigma^2 I)`, renormalized to
/// unit grid mass. Fails if more than `1e-6` of the smoothed mass lies outside
/// the grid cells.
pub fn project_to_grid(source: GridSource<'_>, sigma: f64, grid: &Grid) -> Result<GridMeasure> {
    grid.validate()?;
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Config("sigma must be finite and nonnegative".into()));
    }
    let (lo, hi) = grid.bounds();
    match source {
        GridSource::Spec(spec) => {
            spec.validate()?;
            if spec.dim != grid.dim {
                return Err(Error::Dimension(format!("spec d = {} vs grid d = {}", spec.dim, grid.dim)));
            }
            let outside = spec.smoothed_outside_mass(&lo, &hi, sigma);
            check_outside(outside)?;
            let density = (0..grid.len())
                .map(|idx| spec.smoothed_density(&grid.coords(idx), sigma))
                .collect::<Result<Vec<f64>>>()?;
            GridMeasure::normalized(grid.clone(), density)
        }
        GridSource::Measure(mu) => {
            mu.validate()?;
            if mu.dim() != grid.dim {
                return Err(Error::Dimension(format!("measure d = {} vs grid d = {}", mu.dim(), grid.dim)));
            }
            check_outside(measure_outside_mass(mu, &lo, &hi, sigma))?;
            if sigma == 0.0 {
                return deposit_nearest(mu, grid);
            }
            GridMeasure::normalized(grid.clone(), mixture_density(mu, sigma, grid))
        }
    }
}

fn check_outside(mass: f64) -> Result<()> {
    if mass >= BOUNDARY_MASS_LIMIT {
        return Err(Error::GridTooSmall {
            mass,
            limit: BOUNDARY_MASS_LIMIT,
        });
    }
    Ok(())
}

fn measure_outside_mass(mu: &DiscreteMeasure, lo: &[f64], hi: &[f64], sigma: f64) -> f64 {
    let mut total = 0.0;
    for (row, w) in mu.points.rows().into_iter().zip(&mu.weights) {
        for (a, &x) in row.iter().enumerate() {
            let tail = if sigma == 0.0 {
                if x < lo[a] || x > hi[a] {
                    1.0
                } else {
                    0.0
                }
            } else {
                normal_cdf((lo[a] - x) / sigma) + normal_sf((hi[a] - x) / sigma)
            };
            total += w * tail;
        }
    }
    total
}

/// Gaussian-mixture density `sum_i w_i phi_sigma(z - x_i)` at every node.
/// Per axis the kernel factors, so 2-D grids evaluate 1-D tables.
fn mixture_density(mu: &DiscreteMeasure, sigma: f64, grid: &Grid) -> Vec<f64> {
    let inv = 1.0 / sigma;
    let axes: Vec<Vec<f64>> = (0..grid.dim).map(|a| grid.axis_coords(a)).collect();
    let mut density = vec![0.0; grid.len()];
    let mut tables: Vec<Vec<f64>> = axes.iter().map(|c| vec![0.0; c.len()]).collect();
    for (row, &w) in mu.points.rows().into_iter().zip(&mu.weights) {
        if w == 0.0 {
            continue;
        }
        for (a, coords) in axes.iter().enumerate() {
            let x = row[a];
            for (t, &z) in tables[a].iter_mut().zip(coords) {
                *t = normal_pdf((z - x) * inv) * inv;
            }
        }
        if grid.dim == 1 {
            for (d, t) in density.iter_mut().zip(&tables[0]) {
                *d += w * t;
            }
        } else {
            let n0 = grid.nodes[0];
            for (i1, t1) in tables[1].iter().enumerate() {
                let wt = w * t1;
                for (i0, t0) in tables[0].iter().enumerate() {
                    density[i0 + n0 * i1] += wt * t0;
                }
            }
        }
    }
    density
}

fn deposit_nearest(mu: &DiscreteMeasure, grid: &Grid) -> Result<GridMeasure> {
    let mut density = vec![0.0; grid.len()];
    for (row, &w) in mu.points.rows().into_iter().zip(&mu.weights) {
        let mut idx = 0;
        let mut stride = 1;
        for a in 0..grid.dim {
            let k = ((row[a] - grid.origin[a]) / grid.spacing[a]).round();
            let k = k.clamp(0.0, (grid.nodes[a] - 1) as f64) as usize;
            idx += k * stride;
            stride *= grid.nodes[a];
        }
        density[idx] += w;
    }
    GridMeasure::normalized(grid.clone(), density)
}
