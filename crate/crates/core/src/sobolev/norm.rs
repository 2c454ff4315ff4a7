//! Discrete dual Sobolev norms `||h||_{H^{-1,p}(rho)}` on a grid.
//!
//! Node potentials `phi` have edge gradients `v_e = (phi_b - phi_a) / h_e`;
//! edges carry the harmonic mean of the node densities. With cell volume `V`
//! the discrete norm is
//! `sup { V <h, phi> : sum_e V rho_e |v_e|^q <= 1 }`.
//! For p = 2 it is `sqrt(V <h, u>)` where `div(rho grad u) = -h`, solved by
//! Jacobi-preconditioned CG. For other p the same supremum is computed from
//! its convex formulations: for `p <= 2` the primal
//! `J(phi) = (1/q) sum V rho_e |v_e|^q - V <h, phi>` with norm `(-p J*)^{1/p}`,
//! for `p > 2` the dual flux problem
//! `min { (1/p) sum V rho_e^{1-p} |F_e|^p : -div F = h }`, whose optimal
//! value is `norm^p / p`. Both are minimized by FISTA with backtracking and
//! function-value restarts. In 2-D and `p != 2` the edge form measures
//! `|d_x phi|^q + |d_y phi|^q` rather than `|grad phi|^q`.

use crate::error::{Error, Result};

use super::grid::{Boundary, Edge, GradientField, GridMeasure, GridSigned};

pub const P2_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralPOptions {
    /// Stop when the objective changes by less than `tol` (relative) over
    /// [`Self::WINDOW`] iterations.
    pub tol: f64,
    pub max_iter: usize,
}

impl GeneralPOptions {
    pub const WINDOW: usize = 20;
}

impl Default for GeneralPOptions {
    fn default() -> Self {
        GeneralPOptions {
            tol: 1e-12,
            max_iter: 500_000,
        }
    }
}

struct EdgeSystem {
    edges: Vec<Edge>,
    inv_h: Vec<f64>,
    rho_e: Vec<f64>,
    n: usize,
    vol: f64,
}

impl EdgeSystem {
    fn new(rho: &GridMeasure, h: &GridSigned) -> Result<Self> {
        rho.validate()?;
        if rho.grid != h.grid {
            return Err(Error::Config("rho and h live on different grids".into()));
        }
        if !(rho.min_density() > 0.0) {
            return Err(Error::Config("reference density must be strictly positive".into()));
        }
        let grid = &rho.grid;
        let edges = grid.edges();
        let inv_h = edges.iter().map(|e| 1.0 / grid.spacing[e.axis]).collect();
        let rho_e = edges
            .iter()
            .map(|e| {
                let (a, b) = (rho.density[e.a], rho.density[e.b]);
                2.0 * a * b / (a + b)
            })
            .collect();
        Ok(EdgeSystem {
            edges,
            inv_h,
            rho_e,
            n: grid.len(),
            vol: grid.cell_volume(),
        })
    }

    fn grad(&self, phi: &[f64], out: &mut [f64]) {
        for (k, e) in self.edges.iter().enumerate() {
            out[k] = (phi[e.b] - phi[e.a]) * self.inv_h[k];
        }
    }

    /// `(B f)_i`, i.e. minus the discrete divergence of the edge field `f`.
    fn neg_div(&self, f: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (k, e) in self.edges.iter().enumerate() {
            let s = f[k] * self.inv_h[k];
            out[e.b] += s;
            out[e.a] -= s;
        }
    }

    fn apply_a(&self, u: &[f64], edge_buf: &mut [f64], out: &mut [f64]) {
        self.grad(u, edge_buf);
        for (f, r) in edge_buf.iter_mut().zip(&self.rho_e) {
            *f *= r;
        }
        self.neg_div(edge_buf, out);
    }

    fn diag(&self, weights: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for (k, e) in self.edges.iter().enumerate() {
            let s = weights[k] * self.inv_h[k] * self.inv_h[k];
            d[e.a] += s;
            d[e.b] += s;
        }
        d
    }
}

fn centered(h: &GridSigned) -> Vec<f64> {
    let mean = h.values.iter().sum::<f64>() / h.values.len() as f64;
    h.values.iter().map(|v| v - mean).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Result of the p = 2 solve.
#[derive(Debug, Clone)]
pub struct P2Solution {
    pub norm: f64,
    /// Mean-zero node potential `u`.
    pub potential: Vec<f64>,
    /// Edge gradient of `u`.
    pub field: GradientField,
    pub iterations: usize,
    /// Relative residual `||h - A u|| / ||h||` of the returned potential.
    pub residual: f64,
}

/// Full p = 2 solve with potential and gradient field.
pub fn solve_p2(rho: &GridMeasure, h: &GridSigned) -> Result<P2Solution> {
    let sys = EdgeSystem::new(rho, h)?;
    let rhs = centered(h);
    let n = sys.n;
    let mut u = vec![0.0; n];
    let hn = norm2(&rhs);
    let mut iterations = 0;
    let mut residual = 0.0;
    if hn > 0.0 {
        let diag = sys.diag(&sys.rho_e);
        let mut eb = vec![0.0; sys.edges.len()];
        let mut r = rhs.clone();
        let mut ap = vec![0.0; n];
        let max_iter = 20 * n + 1000;
        'outer: loop {
            let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
            let mut p = z.clone();
            let mut rz = dot(&r, &z);
            loop {
                if iterations >= max_iter {
                    return Err(Error::NoConvergence {
                        iterations,
                        residual: norm2(&r) / hn,
                    });
                }
                iterations += 1;
                sys.apply_a(&p, &mut eb, &mut ap);
                let pap = dot(&p, &ap);
                if !(pap > 0.0) {
                    break;
                }
                let alpha = rz / pap;
                for i in 0..n {
                    u[i] += alpha * p[i];
                    r[i] -= alpha * ap[i];
                }
                if norm2(&r) <= P2_TOLERANCE * hn {
                    break;
                }
                for i in 0..n {
                    z[i] = r[i] / diag[i];
                }
                let rz_new = dot(&r, &z);
                let beta = rz_new / rz;
                rz = rz_new;
                for i in 0..n {
                    p[i] = z[i] + beta * p[i];
                }
            }
            // recheck against the true residual
            sys.apply_a(&u, &mut eb, &mut ap);
            for i in 0..n {
                r[i] = rhs[i] - ap[i];
            }
            residual = norm2(&r) / hn;
            if residual <= P2_TOLERANCE {
                break 'outer;
            }
        }
        let mean = u.iter().sum::<f64>() / n as f64;
        u.iter_mut().for_each(|v| *v -= mean);
    }
    let norm_sq = sys.vol * dot(&rhs, &u);
    let mut grad = vec![0.0; sys.edges.len()];
    sys.grad(&u, &mut grad);
    let mut components = vec![Vec::new(); rho.grid.dim];
    for (e, g) in sys.edges.iter().zip(&grad) {
        components[e.axis].push(*g);
    }
    Ok(P2Solution {
        norm: norm_sq.max(0.0).sqrt(),
        potential: u,
        field: GradientField {
            grid: rho.grid.clone(),
            components,
        },
        iterations,
        residual,
    })
}

/// `||h||_{H^{-1,2}(rho)}` by preconditioned conjugate gradients.
pub fn dual_norm_p2(rho: &GridMeasure, h: &GridSigned) -> Result<f64> {
    Ok(solve_p2(rho, h)?.norm)
}

#[derive(Debug, Clone)]
pub struct GeneralPSolution {
    pub norm: f64,
    pub objective: f64,
    pub iterations: usize,
}

/// `||h||_{H^{-1,p}(rho)}` for any `p > 1` by first-order convex minimization.
pub fn dual_norm_general_p(rho: &GridMeasure, h: &GridSigned, p: f64, tol: f64, max_iter: usize) -> Result<f64> {
    Ok(solve_general_p(rho, h, p, GeneralPOptions { tol, max_iter })?.norm)
}

/// p = 2 goes to the linear solve, anything else to [`solve_general_p`].
pub fn dual_norm(rho: &GridMeasure, h: &GridSigned, p: f64) -> Result<f64> {
    if p == 2.0 {
        dual_norm_p2(rho, h)
    } else {
        Ok(solve_general_p(rho, h, p, GeneralPOptions::default())?.norm)
    }
}

pub fn solve_general_p(rho: &GridMeasure, h: &GridSigned, p: f64, opts: GeneralPOptions) -> Result<GeneralPSolution> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::Config(format!("p must exceed 1, got {p}")));
    }
    let sys = EdgeSystem::new(rho, h)?;
    let rhs = centered(h);
    if rhs.iter().all(|v| *v == 0.0) {
        return Ok(GeneralPSolution {
            norm: 0.0,
            objective: 0.0,
            iterations: 0,
        });
    }
    if rho.grid.dim == 1 {
        line_flux(&sys, rho, h, &rhs, p)
    } else if p <= 2.0 {
        primal(&sys, &rhs, p, opts)
    } else {
        flux_dual(&sys, rho, h, &rhs, p, opts)
    }
}

fn primal(sys: &EdgeSystem, rhs: &[f64], p: f64, opts: GeneralPOptions) -> Result<GeneralPSolution> {
    let q = p / (p - 1.0);
    let w: Vec<f64> = sys.rho_e.iter().map(|r| sys.vol * r).collect();
    let diag = sys.diag(&w);
    let mut v = vec![0.0; sys.edges.len()];
    let mut s = vec![0.0; sys.edges.len()];
    let eval = |phi: &[f64], grad: Option<&mut [f64]>| -> f64 {
        sys.grad(phi, &mut v);
        let mut val = 0.0;
        for k in 0..v.len() {
            let a = v[k].abs();
            let aq2 = if q == 2.0 { 1.0 } else if a == 0.0 { 0.0 } else { a.powf(q - 2.0) };
            val += w[k] * aq2 * a * a / q;
            s[k] = w[k] * aq2 * v[k];
        }
        val -= sys.vol * dot(rhs, phi);
        if let Some(g) = grad {
            sys.neg_div(&s, g);
            for (gi, hi) in g.iter_mut().zip(rhs) {
                *gi -= sys.vol * hi;
            }
        }
        val
    };
    let (_, obj, iterations) = fista(vec![0.0; sys.n], &diag, eval, opts)?;
    Ok(GeneralPSolution {
        norm: (-p * obj).max(0.0).powf(1.0 / p),
        objective: obj,
        iterations,
    })
}

/// Sparse basis of divergence-free edge fields: cell circulations, plus one
/// loop per periodic axis.
fn cycle_basis(sys: &EdgeSystem, rho: &GridMeasure) -> Vec<Vec<(usize, f64)>> {
    let grid = &rho.grid;
    let mut cols = Vec::new();
    let periodic = grid.boundary == Boundary::Periodic;
    if grid.dim == 1 {
        if periodic {
            let h = grid.spacing[0];
            cols.push((0..sys.edges.len()).map(|k| (k, h)).collect());
        }
        return cols;
    }
    let n = grid.len();
    let mut from = [vec![usize::MAX; n], vec![usize::MAX; n]];
    for (k, e) in sys.edges.iter().enumerate() {
        from[e.axis][e.a] = k;
    }
    let (hx, hy) = (grid.spacing[0], grid.spacing[1]);
    let (n0, n1) = (grid.nodes[0], grid.nodes[1]);
    for i1 in 0..n1 {
        for i0 in 0..n0 {
            let n00 = i0 + n0 * i1;
            let bottom = from[0][n00];
            let left = from[1][n00];
            if bottom == usize::MAX || left == usize::MAX {
                continue;
            }
            let n10 = sys.edges[bottom].b;
            let n01 = sys.edges[left].b;
            let right = from[1][n10];
            let top = from[0][n01];
            if right == usize::MAX || top == usize::MAX {
                continue;
            }
            cols.push(vec![(bottom, hx), (right, hy), (top, -hx), (left, -hy)]);
        }
    }
    if periodic {
        cols.push((0..n0).map(|i0| (from[0][i0], hx)).collect());
        cols.push((0..n1).map(|i1| (from[1][n0 * i1], hy)).collect());
    }
    cols
}

/// An edge flux with `B F = h`.
fn particular_flux(sys: &EdgeSystem, rho: &GridMeasure, h: &GridSigned, rhs: &[f64]) -> Result<Vec<f64>> {
    if rho.grid.dim == 1 {
        let dx = rho.grid.spacing[0];
        let mut f = vec![0.0; sys.edges.len()];
        let mut acc = 0.0;
        for (k, e) in sys.edges.iter().enumerate() {
            if e.b == e.a + 1 {
                acc += rhs[e.a];
                f[k] = -dx * acc;
            }
        }
        return Ok(f);
    }
    let sol = solve_p2(rho, h)?;
    let mut f = vec![0.0; sys.edges.len()];
    sys.grad(&sol.potential, &mut f);
    for (fk, r) in f.iter_mut().zip(&sys.rho_e) {
        *fk *= r;
    }
    Ok(f)
}

/// On a 1-D grid the admissible fluxes are one particular flux plus (when
/// periodic) a constant loop current, so the problem is at most a scalar
/// convex minimization, solved by bisection on its derivative.
fn line_flux(sys: &EdgeSystem, rho: &GridMeasure, h: &GridSigned, rhs: &[f64], p: f64) -> Result<GeneralPSolution> {
    let f0 = particular_flux(sys, rho, h, rhs)?;
    let w: Vec<f64> = sys.rho_e.iter().map(|r| sys.vol * r.powf(1.0 - p)).collect();
    let energy = |c: f64| -> f64 { f0.iter().zip(&w).map(|(x, wk)| wk * pow_abs(x + c, p)).sum::<f64>() };
    let mut iterations = 0;
    let shift = if rho.grid.boundary == Boundary::Periodic {
        let slope = |c: f64| -> f64 {
            f0.iter()
                .zip(&w)
                .map(|(x, wk)| wk * (x + c).signum() * pow_abs(x + c, p - 1.0))
                .sum::<f64>()
        };
        let (mut lo, mut hi) = f0.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(-x), b.max(-x)));
        while hi - lo > 1e-15 * (lo.abs() + hi.abs()) && iterations < 200 {
            iterations += 1;
            let mid = 0.5 * (lo + hi);
            if slope(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    } else {
        0.0
    };
    let e = energy(shift);
    Ok(GeneralPSolution {
        norm: e.powf(1.0 / p),
        objective: e / p,
        iterations,
    })
}

fn pow_abs(x: f64, p: f64) -> f64 {
    let a = x.abs();
    if a == 0.0 {
        0.0
    } else {
        a.powf(p)
    }
}

fn flux_dual(sys: &EdgeSystem, rho: &GridMeasure, h: &GridSigned, rhs: &[f64], p: f64, opts: GeneralPOptions) -> Result<GeneralPSolution> {
    let f0 = particular_flux(sys, rho, h, rhs)?;
    let w: Vec<f64> = sys.rho_e.iter().map(|r| sys.vol * r.powf(1.0 - p)).collect();
    let energy = |f: &[f64]| -> f64 { f.iter().zip(&w).map(|(x, wk)| wk * x.abs().powf(p)).sum::<f64>() };
    let cols = cycle_basis(sys, rho);
    if cols.is_empty() {
        let e = energy(&f0);
        return Ok(GeneralPSolution {
            norm: e.powf(1.0 / p),
            objective: e / p,
            iterations: 0,
        });
    }
    let fmax = f0.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(f64::MIN_POSITIVE);
    let diag: Vec<f64> = cols
        .iter()
        .map(|c| {
            c.iter()
                .map(|&(k, a)| a * a * w[k] * (f0[k].abs() + 1e-3 * fmax).powf(p - 2.0))
                .sum::<f64>()
                .max(f64::MIN_POSITIVE)
        })
        .collect();
    let mut f = vec![0.0; sys.edges.len()];
    let eval = |z: &[f64], grad: Option<&mut [f64]>| -> f64 {
        f.copy_from_slice(&f0);
        for (c, &zc) in cols.iter().zip(z) {
            for &(k, a) in c {
                f[k] += a * zc;
            }
        }
        let mut val = 0.0;
        for k in 0..f.len() {
            let a = f[k].abs();
            let ap2 = if a == 0.0 { 0.0 } else { a.powf(p - 2.0) };
            val += w[k] * ap2 * a * a / p;
            f[k] *= w[k] * ap2;
        }
        if let Some(g) = grad {
            for (gc, c) in g.iter_mut().zip(&cols) {
                *gc = c.iter().map(|&(k, a)| a * f[k]).sum();
            }
        }
        val
    };
    let (_, obj, iterations) = fista(vec![0.0; cols.len()], &diag, eval, opts)?;
    Ok(GeneralPSolution {
        norm: (p * obj).max(0.0).powf(1.0 / p),
        objective: obj,
        iterations,
    })
}

/// Diagonally scaled FISTA with backtracking on the local Lipschitz
/// constant and a function-value restart. Returns the minimizer, the
/// minimum and the iteration count.
fn fista<F>(x0: Vec<f64>, diag: &[f64], mut eval: F, opts: GeneralPOptions) -> Result<(Vec<f64>, f64, usize)>
where
    F: FnMut(&[f64], Option<&mut [f64]>) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut gx = vec![0.0; n];
    let mut fx = eval(&x, Some(&mut gx));
    let mut y = x.clone();
    let mut gy = gx.clone();
    let mut fy = fx;
    let mut xn = vec![0.0; n];
    let mut t = 1.0f64;
    let mut lip = 1.0f64;
    let mut history = vec![fx];
    let mut last_change = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let fxn = loop {
            for i in 0..n {
                xn[i] = y[i] - gy[i] / (lip * diag[i]);
            }
            let f_new = eval(&xn, None);
            let mut model = fy;
            for i in 0..n {
                let d = xn[i] - y[i];
                model += gy[i] * d + 0.5 * lip * diag[i] * d * d;
            }
            if f_new <= model + 1e-14 * fy.abs() {
                break f_new;
            }
            lip *= 2.0;
            if lip > 1e40 {
                return Err(Error::NoConvergence {
                    iterations: it,
                    residual: last_change,
                });
            }
        };
        if fxn > fx {
            if t == 1.0 {
                // a plain gradient step from x cannot descend: rounding floor
                return Ok((x, fx, it));
            }
            // momentum overshoot: restart from x
            t = 1.0;
            y.copy_from_slice(&x);
            fy = eval(&y, Some(&mut gy));
            continue;
        }
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / tn;
        for i in 0..n {
            y[i] = xn[i] + mom * (xn[i] - x[i]);
        }
        x.copy_from_slice(&xn);
        fx = fxn;
        t = tn;
        fy = eval(&y, Some(&mut gy));
        lip *= 0.9;
        history.push(fx);
        let k = history.len() - 1;
        if k >= GeneralPOptions::WINDOW {
            let old = history[k - GeneralPOptions::WINDOW];
            last_change = (old - fx).abs() / fx.abs().max(f64::MIN_POSITIVE);
            if last_change <= opts.tol {
                return Ok((x, fx, it));
            }
            // no progress at all over a long stretch: rounding floor reached
            if k >= 10 * GeneralPOptions::WINDOW && history[k - 10 * GeneralPOptions::WINDOW] <= fx {
                return Ok((x, fx, it));
            }
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: last_change,
    })
}
