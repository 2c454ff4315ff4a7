//! Transportation network simplex.
//!
//! The basis is a spanning tree of the complete bipartite graph (rows are
//! sources, columns are targets) with `k + l - 1` arcs, degenerate zero-flow
//! arcs included. Pricing is Dantzig's rule with ties going to the lowest
//! cell index `i * l + j`; the leaving arc is the lowest-index blocking arc.
//! After a long run of degenerate pivots the entering rule switches to
//! Bland's (first improving cell) until flow moves again, which rules out
//! cycling.

use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;
use crate::stats::compensated_sum;

use super::{check_pair, cost, dual_objective, DualPotentials, PlanEntry, TransportPlan};

#[derive(Debug, Clone, Copy)]
struct BasicArc {
    i: usize,
    j: usize,
    flow: f64,
}

struct Tree {
    k: usize,
    l: usize,
    arcs: Vec<BasicArc>,
    /// Basis position of cell `i * l + j`, or `usize::MAX`.
    slot: Vec<usize>,
    /// Incident basis positions per node; rows are `0..k`, columns `k..k+l`.
    adj: Vec<Vec<usize>>,
}

impl Tree {
    fn other_end(&self, arc: usize, node: usize) -> usize {
        let a = self.arcs[arc];
        if node < self.k {
            self.k + a.j
        } else {
            a.i
        }
    }

    fn insert(&mut self, pos: usize, arc: BasicArc) {
        self.arcs[pos] = arc;
        self.slot[arc.i * self.l + arc.j] = pos;
        self.adj[arc.i].push(pos);
        self.adj[self.k + arc.j].push(pos);
    }

    fn remove(&mut self, pos: usize) {
        let a = self.arcs[pos];
        self.slot[a.i * self.l + a.j] = usize::MAX;
        self.adj[a.i].retain(|&x| x != pos);
        self.adj[self.k + a.j].retain(|&x| x != pos);
    }
}

/// Exact transportation LP between two discrete measures of any dimension.
pub fn network_simplex(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<(TransportPlan, DualPotentials)> {
    check_pair(mu, nu, p)?;
    let (k, l) = (mu.len(), nu.len());
    let mut c = vec![0.0; k * l];
    for (i, xi) in mu.points.rows().into_iter().enumerate() {
        for (j, yj) in nu.points.rows().into_iter().enumerate() {
            let v = cost(xi, yj, p);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("cost entry ({i}, {j}) is {v}")));
            }
            c[i * l + j] = v;
        }
    }
    let cmax = c.iter().fold(0.0f64, |a, &b| a.max(b));
    let eps = 1e-13 * cmax.max(1.0);

    let mut tree = initial_basis(mu, nu);
    let nodes = k + l;
    let mut u = vec![0.0; k];
    let mut v = vec![0.0; l];
    let mut stamp = vec![0u32; nodes];
    let mut parent = vec![usize::MAX; nodes];
    let mut epoch = 0u32;
    let mut stack = Vec::with_capacity(nodes);

    let max_iter = 1000 * nodes + 10_000;
    let mut degenerate_run = 0usize;
    let mut iterations = 0usize;
    loop {
        compute_duals(&tree, &c, &mut u, &mut v, &mut stack);
        let bland = degenerate_run > nodes;
        let mut entering = None;
        let mut best = -eps;
        'scan: for i in 0..k {
            let row = &c[i * l..(i + 1) * l];
            for j in 0..l {
                let r = row[j] - u[i] - v[j];
                if r < best {
                    entering = Some((i, j));
                    best = r;
                    if bland {
                        break 'scan;
                    }
                }
            }
        }
        let Some((ei, ej)) = entering else { break };
        iterations += 1;
        if iterations > max_iter {
            return Err(Error::NoConvergence {
                iterations,
                residual: best,
            });
        }

        // Tree path from column ej back to row ei.
        epoch += 1;
        stack.clear();
        stack.push(ei);
        stamp[ei] = epoch;
        let target = k + ej;
        while let Some(node) = stack.pop() {
            if node == target {
                break;
            }
            for &arc in &tree.adj[node] {
                let next = tree.other_end(arc, node);
                if stamp[next] != epoch {
                    stamp[next] = epoch;
                    parent[next] = arc;
                    stack.push(next);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = target;
        while node != ei {
            let arc = parent[node];
            path.push(arc);
            node = tree.other_end(arc, node);
        }

        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for &arc in path.iter().step_by(2) {
            let a = tree.arcs[arc];
            let f = a.flow;
            let better = f < theta
                || (f == theta && a.i * l + a.j < tree.arcs[leave].i * l + tree.arcs[leave].j);
            if better {
                theta = f;
                leave = arc;
            }
        }
        for (pos, &arc) in path.iter().enumerate() {
            if pos % 2 == 0 {
                tree.arcs[arc].flow -= theta;
            } else {
                tree.arcs[arc].flow += theta;
            }
        }
        if theta > 0.0 {
            degenerate_run = 0;
        } else {
            degenerate_run += 1;
        }
        tree.remove(leave);
        tree.insert(
            leave,
            BasicArc {
                i: ei,
                j: ej,
                flow: theta,
            },
        );
    }

    let mut entries: Vec<PlanEntry> = tree
        .arcs
        .iter()
        .filter(|a| a.flow > 0.0)
        .map(|a| PlanEntry {
            i: a.i,
            j: a.j,
            mass: a.flow,
        })
        .collect();
    entries.sort_by_key(|e| (e.i, e.j));
    let primal_cost = compensated_sum(entries.iter().map(|e| e.mass * c[e.i * l + e.j]));

    // canonical duals: g_0 = 0, gc = ct(g), g = ct(gc)
    let shift = u[0];
    let g0: Vec<f64> = u.iter().map(|x| x - shift).collect();
    let gc: Vec<f64> = (0..l)
        .map(|j| (0..k).map(|i| c[i * l + j] - g0[i]).fold(f64::INFINITY, f64::min))
        .collect();
    let g: Vec<f64> = (0..k)
        .map(|i| (0..l).map(|j| c[i * l + j] - gc[j]).fold(f64::INFINITY, f64::min))
        .collect();
    let dual_value = dual_objective(&g, &gc, mu, nu);
    Ok((
        TransportPlan {
            entries,
            primal_cost,
            source_size: k,
            target_size: l,
        },
        DualPotentials { g, gc, dual_value },
    ))
}

/// North-west corner rule on atoms ordered by their first coordinate.
fn initial_basis(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Tree {
    let (k, l) = (mu.len(), nu.len());
    let order = |m: &DiscreteMeasure| {
        let mut idx: Vec<usize> = (0..m.len()).collect();
        idx.sort_by(|&a, &b| m.points[[a, 0]].total_cmp(&m.points[[b, 0]]).then(a.cmp(&b)));
        idx
    };
    let (px, py) = (order(mu), order(nu));
    let mut tree = Tree {
        k,
        l,
        arcs: vec![
            BasicArc {
                i: 0,
                j: 0,
                flow: 0.0
            };
            k + l - 1
        ],
        slot: vec![usize::MAX; k * l],
        adj: vec![Vec::new(); k + l],
    };
    let (mut i, mut j) = (0usize, 0usize);
    let (mut a, mut b) = (mu.weights[px[0]], nu.weights[py[0]]);
    let mut pos = 0;
    loop {
        let t = a.min(b);
        tree.insert(
            pos,
            BasicArc {
                i: px[i],
                j: py[j],
                flow: t,
            },
        );
        pos += 1;
        a -= t;
        b -= t;
        if i == k - 1 && j == l - 1 {
            break;
        }
        if j == l - 1 || (a <= 0.0 && i < k - 1) {
            i += 1;
            a = mu.weights[px[i]];
        } else {
            j += 1;
            b = nu.weights[py[j]];
        }
    }
    debug_assert_eq!(pos, k + l - 1);
    tree
}

fn compute_duals(tree: &Tree, c: &[f64], u: &mut [f64], v: &mut [f64], stack: &mut Vec<usize>) {
    let (k, l) = (tree.k, tree.l);
    let mut seen = vec![false; k + l];
    stack.clear();
    stack.push(0);
    seen[0] = true;
    u[0] = 0.0;
    while let Some(node) = stack.pop() {
        for &arc in &tree.adj[node] {
            let a = tree.arcs[arc];
            let next = tree.other_end(arc, node);
            if seen[next] {
                continue;
            }
            seen[next] = true;
            if next < k {
                u[next] = c[a.i * l + a.j] - v[a.j];
            } else {
                v[next - k] = c[a.i * l + a.j] - u[a.i];
            }
            stack.push(next);
        }
    }
}
