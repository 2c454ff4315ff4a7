//! One-dimensional transport: monotone coupling, quantile formula and a fast
//! c-transform for convex costs.

use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;
use crate::stats::compensated_sum;

use super::{dual_objective, pow_cost, DualPotentials, PlanEntry, TransportPlan};

/// Indices that sort `values` ascending; ties keep index order.
pub fn sort_permutation(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    idx
}

/// Sorted locations and matching weights of a 1-D measure.
pub fn sorted_atoms(mu: &DiscreteMeasure) -> (Vec<f64>, Vec<f64>) {
    let xs = mu.points.column(0);
    let mut pairs: Vec<(f64, f64)> = xs.iter().copied().zip(mu.weights.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Optimal cost `sum mass |x - y|^p` of the monotone coupling between two
/// sorted weighted point sets. Zero-weight atoms are skipped.
pub fn sorted_cost_1d(xs: &[f64], wx: &[f64], ys: &[f64], wy: &[f64], p: f64) -> f64 {
    let (k, l) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut a = wx.first().copied().unwrap_or(0.0);
    let mut b = wy.first().copied().unwrap_or(0.0);
    let mut total = 0.0;
    let mut comp = 0.0;
    while i < k && j < l {
        let t = a.min(b);
        if t > 0.0 {
            let v = t * pow_cost((xs[i] - ys[j]).abs(), p);
            // Neumaier step
            let s = total + v;
            if total.abs() >= v.abs() {
                comp += (total - s) + v;
            } else {
                comp += (v - s) + total;
            }
            total = s;
        }
        a -= t;
        b -= t;
        if a <= 0.0 {
            i += 1;
            if i < k {
                a = wx[i];
            }
        } else {
            j += 1;
            if j < l {
                b = wy[j];
            }
        }
    }
    total + comp
}

/// `W_p` between two 1-D measures as the `L^p` distance of their quantile
/// functions, computed by merging the cumulative-weight breakpoints.
pub fn wasserstein_1d(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<f64> {
    if mu.dim() != 1 || nu.dim() != 1 {
        return Err(Error::Dimension("wasserstein_1d needs d = 1".into()));
    }
    mu.validate()?;
    nu.validate()?;
    let (xs, wx) = sorted_atoms(mu);
    let (ys, wy) = sorted_atoms(nu);
    let cum = |w: &[f64]| {
        let mut acc = 0.0;
        w.iter()
            .map(|v| {
                acc += v;
                acc
            })
            .collect::<Vec<f64>>()
    };
    let (fx, fy) = (cum(&wx), cum(&wy));
    let mut pieces = Vec::with_capacity(xs.len() + ys.len());
    let (mut a, mut b) = (0usize, 0usize);
    let mut t = 0.0;
    while a < xs.len() && b < ys.len() {
        let next = fx[a].min(fy[b]);
        if next > t {
            pieces.push((next - t) * pow_cost((xs[a] - ys[b]).abs(), p));
            t = next;
        }
        if fx[a] <= next {
            a += 1;
        }
        if fy[b] <= next {
            b += 1;
        }
    }
    Ok(compensated_sum(pieces).max(0.0).powf(1.0 / p))
}

/// `h_j = min_i (|x_i - y_j|^p - g_i)` for ascending `xs` and `ys`.
///
/// For `p >= 1` the matrix `|x_i - y_j|^p - g_i` is Monge, so the leftmost
/// row minima move monotonically and divide and conquer needs
/// `O((k + l) log l)` cost evaluations.
pub fn c_transform_sorted(g: &[f64], xs: &[f64], ys: &[f64], p: f64) -> Vec<f64> {
    let mut h = vec![0.0; ys.len()];
    if xs.is_empty() || ys.is_empty() {
        return h;
    }
    let mut stack = vec![(0usize, ys.len(), 0usize, xs.len() - 1)];
    while let Some((lo, hi, ilo, ihi)) = stack.pop() {
        if lo >= hi {
            continue;
        }
        let mid = (lo + hi) / 2;
        let y = ys[mid];
        let mut best = f64::INFINITY;
        let mut arg = ilo;
        for i in ilo..=ihi {
            let v = pow_cost((xs[i] - y).abs(), p) - g[i];
            if v < best {
                best = v;
                arg = i;
            }
        }
        h[mid] = best;
        stack.push((lo, mid, ilo, arg));
        stack.push((mid + 1, hi, arg, ihi));
    }
    h
}

/// c-transform for unsorted 1-D locations.
pub fn c_transform_1d(g: &[f64], xs: &[f64], ys: &[f64], p: f64) -> Vec<f64> {
    let px = sort_permutation(xs);
    let py = sort_permutation(ys);
    let sx: Vec<f64> = px.iter().map(|&i| xs[i]).collect();
    let sg: Vec<f64> = px.iter().map(|&i| g[i]).collect();
    let sy: Vec<f64> = py.iter().map(|&j| ys[j]).collect();
    let sh = c_transform_sorted(&sg, &sx, &sy, p);
    let mut h = vec![0.0; ys.len()];
    for (pos, &j) in py.iter().enumerate() {
        h[j] = sh[pos];
    }
    h
}

/// Monotone coupling with staircase duals, then the canonical normalization.
pub(crate) fn solve_1d(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<(TransportPlan, DualPotentials)> {
    let x = mu.coords_1d()?;
    let y = nu.coords_1d()?;
    let px = sort_permutation(&x);
    let py = sort_permutation(&y);
    let xs: Vec<f64> = px.iter().map(|&i| x[i]).collect();
    let ys: Vec<f64> = py.iter().map(|&j| y[j]).collect();
    let wx: Vec<f64> = px.iter().map(|&i| mu.weights[i]).collect();
    let wy: Vec<f64> = py.iter().map(|&j| nu.weights[j]).collect();
    let (k, l) = (xs.len(), ys.len());
    let c = |i: usize, j: usize| pow_cost((xs[i] - ys[j]).abs(), p);

    // The staircase is a spanning path of the bipartite graph; duals follow it.
    let mut g = vec![0.0; k];
    let mut gc = vec![0.0; l];
    let mut entries = Vec::with_capacity(k + l - 1);
    let (mut i, mut j) = (0usize, 0usize);
    let (mut a, mut b) = (wx[0], wy[0]);
    gc[0] = c(0, 0);
    loop {
        let t = a.min(b);
        if t > 0.0 {
            entries.push(PlanEntry {
                i: px[i],
                j: py[j],
                mass: t,
            });
        }
        a -= t;
        b -= t;
        if i == k - 1 && j == l - 1 {
            break;
        }
        let advance_row = j == l - 1 || (a <= 0.0 && i < k - 1);
        if advance_row {
            i += 1;
            a = wx[i];
            g[i] = c(i, j) - gc[j];
        } else {
            j += 1;
            b = wy[j];
            gc[j] = c(i, j) - g[i];
        }
    }
    let primal_cost = compensated_sum(
        entries
            .iter()
            .map(|e| e.mass * pow_cost((x[e.i] - y[e.j]).abs(), p)),
    );

    let shift = g[0];
    g.iter_mut().for_each(|v| *v -= shift);
    let sgc = c_transform_sorted(&g, &xs, &ys, p);
    let sg = c_transform_sorted(&sgc, &ys, &xs, p);
    let mut g_out = vec![0.0; k];
    let mut gc_out = vec![0.0; l];
    for (pos, &orig) in px.iter().enumerate() {
        g_out[orig] = sg[pos];
    }
    for (pos, &orig) in py.iter().enumerate() {
        gc_out[orig] = sgc[pos];
    }
    let dual_value = dual_objective(&g_out, &gc_out, mu, nu);
    Ok((
        TransportPlan {
            entries,
            primal_cost,
            source_size: k,
            target_size: l,
        },
        DualPotentials {
            g: g_out,
            gc: gc_out,
            dual_value,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::c_transform;
    use ndarray::Array2;
    use rand::Rng;

    use crate::seed::SeedPath;

    fn col(v: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((v.len(), 1), v.to_vec()).unwrap()
    }

    #[test]
    fn quantile_formula_unit_shift() {
        let mu = DiscreteMeasure::from_1d(&[0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let nu = DiscreteMeasure::from_1d(&[1.0, 2.0], vec![0.5, 0.5]).unwrap();
        assert!((wasserstein_1d(&mu, &nu, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(wasserstein_1d(&mu, &mu, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn fast_c_transform_matches_brute() {
        let mut rng = SeedPath::root(5).child("ct").rng();
        for trial in 0..50 {
            let k = rng.random_range(1..40);
            let l = rng.random_range(1..40);
            let p = [1.0, 1.5, 2.0, 3.0][trial % 4];
            let xs: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let ys: Vec<f64> = (0..l).map(|_| rng.random_range(-2.0..2.0)).collect();
            let g: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = c_transform_1d(&g, &xs, &ys, p);
            let brute = c_transform(&g, col(&xs).view(), col(&ys).view(), p);
            for (a, b) in fast.iter().zip(&brute) {
                assert!((a - b).abs() < 1e-12, "p = {p}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn staircase_duals_feasible_and_tight() {
        let mut rng = SeedPath::root(6).child("stair").rng();
        for _ in 0..50 {
            let k = rng.random_range(1..30);
            let l = rng.random_range(1..30);
            let xs: Vec<f64> = (0..k).map(|_| (rng.random_range(0..8) as f64) * 0.25).collect();
            let ys: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..3.0)).collect();
            let wx = vec![1.0 / k as f64; k];
            let wy = vec![1.0 / l as f64; l];
            let mu = DiscreteMeasure::from_1d(&xs, wx).unwrap();
            let nu = DiscreteMeasure::from_1d(&ys, wy).unwrap();
            let (plan, duals) = solve_1d(&mu, &nu, 2.0).unwrap();
            assert!(plan.entries.len() <= k + l - 1);
            assert!(duals.max_violation(&mu, &nu, 2.0) <= 1e-9);
            assert!((plan.primal_cost - duals.dual_value).abs() <= 1e-9);
            for e in &plan.entries {
                let c = pow_cost((xs[e.i] - ys[e.j]).abs(), 2.0);
                assert!((duals.g[e.i] + duals.gc[e.j] - c).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn merge_matches_quantile_formula() {
        let mu = DiscreteMeasure::from_1d(&[3.0, -1.0, 0.5], vec![0.2, 0.5, 0.3]).unwrap();
        let nu = DiscreteMeasure::from_1d(&[0.0, 2.0], vec![0.6, 0.4]).unwrap();
        let (xs, wx) = sorted_atoms(&mu);
        let (ys, wy) = sorted_atoms(&nu);
        let v = sorted_cost_1d(&xs, &wx, &ys, &wy, 1.5).powf(1.0 / 1.5);
        assert!((v - wasserstein_1d(&mu, &nu, 1.5).unwrap()).abs() < 1e-14);
    }
}
