//! Exact optimal transport between discrete measures with cost `|x - y|^p`.
//!
//! [`solve_exact`] returns an optimal basic plan and normalized LP duals. In
//! one dimension it uses the monotone (north-west corner on sorted atoms)
//! coupling; otherwise a transportation network simplex.

pub mod one_d;
pub mod simplex;

use std::io::Write;

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;
use crate::stats::compensated_sum;

pub use one_d::{c_transform_1d, sorted_cost_1d, wasserstein_1d};
pub use simplex::network_simplex;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub i: usize,
    pub j: usize,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub entries: Vec<PlanEntry>,
    pub primal_cost: f64,
    pub source_size: usize,
    pub target_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualPotentials {
    pub g: Vec<f64>,
    pub gc: Vec<f64>,
    pub dual_value: f64,
}

/// `|t|^p` for a distance `t >= 0`, with `0^p = 0`.
#[inline]
pub fn pow_cost(t: f64, p: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else if p == 2.0 {
        t * t
    } else {
        (p * t.ln()).exp()
    }
}

/// `|x - y|^p` with the Euclidean norm.
#[inline]
pub fn cost(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>, p: f64) -> f64 {
    let sq: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    if p == 2.0 {
        sq
    } else {
        pow_cost(sq.sqrt(), p)
    }
}

pub(crate) fn check_pair(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<()> {
    mu.validate()?;
    nu.validate()?;
    if mu.dim() != nu.dim() {
        return Err(Error::Dimension(format!("d = {} vs d = {}", mu.dim(), nu.dim())));
    }
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::Config(format!("cost exponent must be >= 1, got {p}")));
    }
    Ok(())
}

/// `h_j = min_i (|x_i - y_j|^p - g_i)`, by direct enumeration.
pub fn c_transform(g: &[f64], x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, p: f64) -> Vec<f64> {
    assert_eq!(g.len(), x.nrows(), "one potential value per source point");
    y.rows()
        .into_iter()
        .map(|yj| {
            x.rows()
                .into_iter()
                .zip(g)
                .map(|(xi, &gi)| cost(xi, yj, p) - gi)
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Value of the dual objective `sum w_i g_i + sum v_j gc_j`.
pub fn dual_objective(g: &[f64], gc: &[f64], mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    compensated_sum(
        g.iter()
            .zip(&mu.weights)
            .map(|(a, w)| a * w)
            .chain(gc.iter().zip(&nu.weights).map(|(b, v)| b * v)),
    )
}

/// `|primal_cost - dual_objective|`.
pub fn duality_gap(plan: &TransportPlan, duals: &DualPotentials, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    (plan.primal_cost - dual_objective(&duals.g, &duals.gc, mu, nu)).abs()
}

/// Optimal plan and normalized duals for the transportation LP with cost
/// `|x_i - y_j|^p`.
pub fn solve_exact(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<(TransportPlan, DualPotentials)> {
    check_pair(mu, nu, p)?;
    if mu.dim() == 1 {
        one_d::solve_1d(mu, nu, p)
    } else {
        network_simplex(mu, nu, p)
    }
}

/// `W_p` itself (the p-th root of the optimal cost).
pub fn wasserstein(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<f64> {
    check_pair(mu, nu, p)?;
    let cost = if mu.dim() == 1 {
        let (xs, wx) = one_d::sorted_atoms(mu);
        let (ys, wy) = one_d::sorted_atoms(nu);
        sorted_cost_1d(&xs, &wx, &ys, &wy, p)
    } else {
        network_simplex(mu, nu, p)?.0.primal_cost
    };
    Ok(cost.max(0.0).powf(1.0 / p))
}

impl TransportPlan {
    pub fn row_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.source_size];
        for e in &self.entries {
            out[e.i] += e.mass;
        }
        out
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.target_size];
        for e in &self.entries {
            out[e.j] += e.mass;
        }
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["i", "j", "mass"])?;
        for e in &self.entries {
            wr.write_record([e.i.to_string(), e.j.to_string(), e.mass.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

impl DualPotentials {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["index", "value", "side"])?;
        for (i, v) in self.g.iter().enumerate() {
            wr.write_record([i.to_string(), v.to_string(), "g".to_string()])?;
        }
        for (j, v) in self.gc.iter().enumerate() {
            wr.write_record([j.to_string(), v.to_string(), "gc".to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Largest violation of `g_i + gc_j <= c_ij`.
    pub fn max_violation(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for (i, xi) in mu.points.rows().into_iter().enumerate() {
            for (j, yj) in nu.points.rows().into_iter().enumerate() {
                worst = worst.max(self.g[i] + self.gc[j] - cost(xi, yj, p));
            }
        }
        worst
    }
}
