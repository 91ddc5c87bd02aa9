//! Exact solver for the balanced transportation problem, used for the
//! 1-Wasserstein distance between discrete distributions.
//!
//! Transportation simplex: a north-west-corner basis, node potentials
//! (u_i + v_j = c_ij on basic cells), entering cell by most negative reduced
//! cost, and the stepping-stone cycle through the basis tree. After a run of
//! degenerate pivots the pricing switches to Bland's smallest-index rule,
//! which cannot cycle.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Consecutive zero-step pivots tolerated before switching to Bland's rule.
const DEGENERATE_STREAK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub cost: f64,
    /// Positive flows `(source, sink, amount)` in row-major order.
    pub flows: Vec<(usize, usize, f64)>,
}

struct Basis {
    m: usize,
    n: usize,
    cells: Vec<(usize, usize)>,
    flow: Vec<f64>,
    /// Basis position of cell `i*n + j`, if basic.
    slot: Vec<Option<usize>>,
}

impl Basis {
    fn north_west(supply: &[f64], demand: &[f64]) -> Basis {
        let (m, n) = (supply.len(), demand.len());
        let mut a = supply.to_vec();
        let mut b = demand.to_vec();
        let mut basis = Basis {
            m,
            n,
            cells: Vec::with_capacity(m + n - 1),
            flow: Vec::with_capacity(m + n - 1),
            slot: vec![None; m * n],
        };
        let (mut i, mut j) = (0, 0);
        while i < m && j < n {
            let x = a[i].min(b[j]).max(0.0);
            basis.slot[i * n + j] = Some(basis.cells.len());
            basis.cells.push((i, j));
            basis.flow.push(x);
            a[i] -= x;
            b[j] -= x;
            if j == n - 1 || (i < m - 1 && a[i] <= b[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        debug_assert_eq!(basis.cells.len(), m + n - 1);
        basis
    }

    /// Adjacency of the basis tree: nodes `0..m` are sources, `m..m+n` sinks.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for (k, &(i, j)) in self.cells.iter().enumerate() {
            adj[i].push((self.m + j, k));
            adj[self.m + j].push((i, k));
        }
        adj
    }

    fn potentials(&self, cost: &[f64], adj: &[Vec<(usize, usize)>]) -> (Vec<f64>, Vec<f64>) {
        let (m, n) = (self.m, self.n);
        let mut pot = vec![f64::NAN; m + n];
        pot[0] = 0.0;
        let mut queue = VecDeque::from([0usize]);
        while let Some(node) = queue.pop_front() {
            for &(next, k) in &adj[node] {
                if pot[next].is_nan() {
                    let (i, j) = self.cells[k];
                    pot[next] = cost[i * n + j] - pot[node];
                    queue.push_back(next);
                }
            }
        }
        let v = pot.split_off(m);
        (pot, v)
    }

    /// Basis cells on the tree path from source `p` to sink `q`, in order.
    fn path(&self, p: usize, q: usize, adj: &[Vec<(usize, usize)>]) -> Vec<usize> {
        let target = self.m + q;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; self.m + self.n];
        let mut seen = vec![false; self.m + self.n];
        seen[p] = true;
        let mut queue = VecDeque::from([p]);
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            for &(next, k) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some((node, k));
                    queue.push_back(next);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = target;
        while let Some((prev, k)) = parent[node] {
            path.push(k);
            node = prev;
        }
        path.reverse();
        path
    }
}

/// Minimum-cost plan moving `supply` onto `demand` with per-unit cost
/// `cost[i * demand.len() + j]`. Totals must agree to within a relative 1e-9.
pub fn solve(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<TransportPlan> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 {
        return Err(Error::validation("transport problem with an empty side"));
    }
    if cost.len() != m * n {
        return Err(Error::validation(format!("cost matrix has {} cells, expected {}", cost.len(), m * n)));
    }
    if supply.iter().chain(demand).any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::validation("transport masses must be finite and nonnegative"));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::validation("transport costs must be finite"));
    }
    let (ts, td): (f64, f64) = (supply.iter().sum(), demand.iter().sum());
    if (ts - td).abs() > 1e-9 * ts.max(td).max(1.0) {
        return Err(Error::validation(format!("unbalanced transport problem ({ts} vs {td})")));
    }

    let mut basis = Basis::north_west(supply, demand);
    let scale = cost.iter().fold(0.0f64, |acc, c| acc.max(c.abs())).max(1.0);
    let tol = 1e-12 * scale;
    let cap = 200 * (m + n) * m.max(n) + 1000;
    let mut degenerate = 0;

    for _ in 0..cap {
        let adj = basis.adjacency();
        let (u, v) = basis.potentials(cost, &adj);
        let bland = degenerate >= DEGENERATE_STREAK;
        let mut entering: Option<(usize, usize, f64)> = None;
        'scan: for i in 0..m {
            for j in 0..n {
                if basis.slot[i * n + j].is_some() {
                    continue;
                }
                let d = cost[i * n + j] - u[i] - v[j];
                if d < -tol && entering.is_none_or(|(_, _, best)| d < best) {
                    entering = Some((i, j, d));
                    if bland {
                        break 'scan;
                    }
                }
            }
        }
        let Some((p, q, _)) = entering else {
            return Ok(finish(&basis, cost));
        };

        let path = basis.path(p, q, &adj);
        // path alternates starting with a donor cell at source p
        let mut leave = None::<usize>;
        for &k in path.iter().step_by(2) {
            let better = match leave {
                None => true,
                Some(l) => {
                    let (xk, xl) = (basis.flow[k], basis.flow[l]);
                    xk < xl || (xk == xl && cell_index(&basis, k) < cell_index(&basis, l))
                }
            };
            if better {
                leave = Some(k);
            }
        }
        let leave = leave.expect("cycle has a donor cell");
        let theta = basis.flow[leave];
        for (pos, &k) in path.iter().enumerate() {
            if pos % 2 == 0 {
                basis.flow[k] = (basis.flow[k] - theta).max(0.0);
            } else {
                basis.flow[k] += theta;
            }
        }
        degenerate = if theta > 0.0 { 0 } else { degenerate + 1 };

        let (li, lj) = basis.cells[leave];
        basis.slot[li * n + lj] = None;
        basis.cells[leave] = (p, q);
        basis.flow[leave] = theta;
        basis.slot[p * n + q] = Some(leave);
    }
    Err(Error::SolverStalled(cap))
}

fn cell_index(basis: &Basis, k: usize) -> usize {
    let (i, j) = basis.cells[k];
    i * basis.n + j
}

fn finish(basis: &Basis, cost: &[f64]) -> TransportPlan {
    let mut flows: Vec<(usize, usize, f64)> = basis
        .cells
        .iter()
        .zip(&basis.flow)
        .filter(|(_, &x)| x > 0.0)
        .map(|(&(i, j), &x)| (i, j, x))
        .collect();
    flows.sort_by_key(|&(i, j, _)| (i, j));
    let cost = flows.iter().map(|&(i, j, x)| x * cost[i * basis.n + j]).sum();
    TransportPlan { cost, flows }
}

/// Exact 1-Wasserstein distance between two distributions on a shared
/// support, with `dist(i, j)` the ground metric. Both mass vectors are
/// normalized to sum to one; zero-mass points are dropped before solving.
pub fn wasserstein1(p: &[f64], q: &[f64], dist: impl Fn(usize, usize) -> f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::validation("distributions must share one support"));
    }
    let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    if !(sp > 0.0 && sq > 0.0) {
        return Err(Error::validation("distribution with no mass"));
    }
    let src: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 0.0).collect();
    let dst: Vec<usize> = (0..q.len()).filter(|&j| q[j] > 0.0).collect();
    if src == dst && src.iter().all(|&i| p[i] / sp == q[i] / sq) {
        return Ok(0.0);
    }
    let supply: Vec<f64> = src.iter().map(|&i| p[i] / sp).collect();
    let mut demand: Vec<f64> = dst.iter().map(|&j| q[j] / sq).collect();
    // absorb rounding so both sides sum to the same value
    let drift = supply.iter().sum::<f64>() - demand.iter().sum::<f64>();
    let last = demand.len() - 1;
    demand[last] = (demand[last] + drift).max(0.0);
    let cost: Vec<f64> = src.iter().flat_map(|&i| dst.iter().map(move |&j| (i, j))).map(|(i, j)| dist(i, j)).collect();
    Ok(solve(&supply, &demand, &cost)?.cost.max(0.0))
}
