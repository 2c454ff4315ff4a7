//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use smoothwass::{DiscreteMeasure, SeedPath};

/// Union-find with undo, no path compression.
struct Forest {
    parent: Vec<usize>,
    size: Vec<usize>,
    log: Vec<Option<(usize, usize)>>,
}

impl Forest {
    fn new(n: usize) -> Self {
        Forest {
            parent: (0..n).collect(),
            size: vec![1; n],
            log: Vec::new(),
        }
    }

    fn find(&self, mut v: usize) -> usize {
        while self.parent[v] != v {
            v = self.parent[v];
        }
        v
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        self.log.push(Some((ra, rb)));
        true
    }

    fn undo(&mut self) {
        if let Some(Some((ra, rb))) = self.log.pop() {
            self.parent[rb] = rb;
            self.size[ra] -= self.size[rb];
        }
    }
}

/// Flows of the basic solution on a spanning tree of the bipartite graph,
/// by peeling leaves; `None` when some flow is negative.
fn tree_flows(a: &[f64], b: &[f64], cells: &[(usize, usize)]) -> Option<Vec<f64>> {
    let (k, l) = (a.len(), b.len());
    let mut residual: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut alive = vec![true; cells.len()];
    let mut degree = vec![0usize; k + l];
    for &(i, j) in cells {
        degree[i] += 1;
        degree[k + j] += 1;
    }
    let mut flows = vec![0.0; cells.len()];
    for _ in 0..cells.len() {
        let (e, leaf) = cells
            .iter()
            .enumerate()
            .filter(|(e, _)| alive[*e])
            .find_map(|(e, &(i, j))| {
                if degree[i] == 1 {
                    Some((e, i))
                } else if degree[k + j] == 1 {
                    Some((e, k + j))
                } else {
                    None
                }
            })?;
        let (i, j) = cells[e];
        let other = if leaf == i { k + j } else { i };
        let f = residual[leaf];
        if f < -1e-13 {
            return None;
        }
        flows[e] = f;
        residual[leaf] = 0.0;
        residual[other] -= f;
        alive[e] = false;
        degree[i] -= 1;
        degree[k + j] -= 1;
    }
    if residual.iter().any(|r| r.abs() > 1e-12) {
        return None;
    }
    Some(flows)
}

/// A vertex of the transportation polytope: its basic cells and their flows.
pub type Vertex = (Vec<(usize, usize)>, Vec<f64>);

/// Every basic feasible solution of the transportation polytope, by
/// enumerating all spanning trees of the complete bipartite graph.
pub fn feasible_vertices(a: &[f64], b: &[f64]) -> Vec<Vertex> {
    let (k, l) = (a.len(), b.len());
    let need = k + l - 1;
    let mut out = Vec::new();
    let mut chosen = Vec::with_capacity(need);
    let mut forest = Forest::new(k + l);
    #[allow(clippy::too_many_arguments)]
    fn rec(
        cell: usize,
        k: usize,
        l: usize,
        need: usize,
        a: &[f64],
        b: &[f64],
        chosen: &mut Vec<(usize, usize)>,
        forest: &mut Forest,
        out: &mut Vec<Vertex>,
    ) {
        if chosen.len() == need {
            if let Some(f) = tree_flows(a, b, chosen) {
                out.push((chosen.clone(), f));
            }
            return;
        }
        if k * l - cell < need - chosen.len() {
            return;
        }
        let (i, j) = (cell / l, cell % l);
        if forest.union(i, k + j) {
            chosen.push((i, j));
            rec(cell + 1, k, l, need, a, b, chosen, forest, out);
            chosen.pop();
            forest.undo();
        }
        rec(cell + 1, k, l, need, a, b, chosen, forest, out);
    }
    rec(0, k, l, need, a, b, &mut chosen, &mut forest, &mut out);
    out
}

/// Minimum of `<C, P>` over the given vertices; `c` is row-major `k x l`.
pub fn min_over_vertices(vertices: &[Vertex], l: usize, c: &[f64]) -> f64 {
    vertices
        .iter()
        .map(|(cells, f)| cells.iter().zip(f).map(|(&(i, j), x)| x * c[i * l + j]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Minimum of `<C, P>` over every vertex of the transportation polytope.
pub fn vertex_enumeration(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    min_over_vertices(&feasible_vertices(a, b), b.len(), c)
}

/// Minimum cost over all vertices for integer marginals (equal totals).
///
/// Every vertex has a leaf cell whose flow is `min(a_i, b_j)` of the current
/// residuals; peeling it leaves a vertex of the reduced problem. The search
/// runs over all such peeling sequences, memoized on the residual state, in
/// exact integer arithmetic. Returns the cost divided by `scale`.
pub fn peeling_enumeration(a: &[i64], b: &[i64], c: &[f64], scale: f64) -> f64 {
    use std::collections::HashMap;
    // state: residuals of rows then columns, with -1 marking removed lines
    fn go(state: &mut Vec<i64>, k: usize, l: usize, c: &[f64], memo: &mut HashMap<Vec<i64>, f64>) -> f64 {
        let rows: Vec<usize> = (0..k).filter(|&i| state[i] >= 0).collect();
        let cols: Vec<usize> = (0..l).filter(|&j| state[k + j] >= 0).collect();
        if rows.is_empty() || cols.is_empty() {
            return 0.0;
        }
        if let Some(&v) = memo.get(state.as_slice()) {
            return v;
        }
        let mut best = f64::INFINITY;
        for &i in &rows {
            for &j in &cols {
                let (ri, rj) = (state[i], state[k + j]);
                let x = ri.min(rj);
                let (removed, kept) = if ri <= rj { (i, k + j) } else { (k + j, i) };
                let saved = state[removed];
                state[removed] = -1;
                state[kept] -= x;
                let v = x as f64 * c[i * l + j] + go(state, k, l, c, memo);
                state[kept] += x;
                state[removed] = saved;
                best = best.min(v);
            }
        }
        memo.insert(state.clone(), best);
        best
    }
    let mut state: Vec<i64> = a.iter().chain(b).copied().collect();
    go(&mut state, a.len(), b.len(), c, &mut HashMap::new()) / scale
}

pub fn cost_matrix(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Vec<f64> {
    let mut c = Vec::with_capacity(mu.len() * nu.len());
    for x in mu.points.rows() {
        for y in nu.points.rows() {
            let d2: f64 = x.iter().zip(y.iter()).map(|(u, v)| (u - v) * (u - v)).sum();
            c.push(d2.sqrt().powf(p));
        }
    }
    c
}

/// Random weights bounded away from zero, summing to one.
pub fn random_weights<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

pub fn random_measure<R: Rng>(rng: &mut R, k: usize, d: usize, spread: f64) -> DiscreteMeasure {
    let pts = Array2::from_shape_fn((k, d), |_| rng.random_range(-spread..spread));
    let w = random_weights(rng, k);
    DiscreteMeasure::new(pts, w).unwrap()
}

pub fn rng(label: &str) -> smoothwass::seed::StreamRng {
    SeedPath::root(20_240_917).child(label).rng()
}

/// Gauss–Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for m in 2..=n {
                let p2 = ((2 * m - 1) as f64 * x * p1 - (m - 1) as f64 * p0) / m as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// `int_lo^hi f` with an `n`-point Gauss–Legendre rule.
pub fn integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, n: usize) -> f64 {
    let (x, w) = gauss_legendre(n);
    let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    x.iter().zip(&w).map(|(t, wt)| wt * f(mid + half * t)).sum::<f64>() * half
}
