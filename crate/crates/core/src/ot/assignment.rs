//! Dense shortest-augmenting-path assignment with dual potentials.

use crate::error::{Error, Result};

/// Row-major square cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Argument(format!("cost buffer of length {} is not {n} x {n}", data.len())));
        }
        Ok(CostMatrix { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        CostMatrix { n, data }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Dense,
    Auction,
}

/// Optimal assignment between two equal-size, equal-weight point sets.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportResult {
    /// Average matched cost `(1/N) sum_i c(i, assignment[i])`.
    pub value: f64,
    /// `assignment[i]` is the column matched to row `i`.
    pub assignment: Vec<usize>,
    pub row_potentials: Vec<f64>,
    pub col_potentials: Vec<f64>,
    pub solver: SolverKind,
    /// Augmentations (dense) or bids (auction).
    pub iterations: usize,
    /// Primal minus dual objective, averaged over `N`; zero up to rounding for the dense solver.
    pub dual_gap: f64,
}

/// Largest violation `max(0, u_i + v_j - c_ij)` of dual feasibility.
pub fn max_dual_violation(cost: &CostMatrix, u: &[f64], v: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for (i, ui) in u.iter().enumerate().take(cost.n) {
        for (j, c) in cost.row(i).iter().enumerate() {
            worst = worst.max(ui + v[j] - c);
        }
    }
    worst
}

/// Exact minimum-cost perfect matching on a square matrix.
pub fn solve_assignment(cost: &CostMatrix) -> Result<TransportResult> {
    let n = cost.n;
    if n == 0 {
        return Err(Error::Argument("empty cost matrix".into()));
    }
    if let Some(pos) = cost.data.iter().position(|c| !c.is_finite()) {
        return Err(Error::Argument(format!("non-finite cost at ({}, {})", pos / n, pos % n)));
    }
    const FREE: usize = usize::MAX;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut col_owner = vec![FREE; n];
    let mut row_match = vec![FREE; n];
    // Column then row reduction, then greedy matching along tight edges; the
    // shortest-path phase only has to place the rows left over.
    for (j, vj) in v.iter_mut().enumerate() {
        *vj = (0..n).map(|i| cost.get(i, j)).fold(f64::INFINITY, f64::min);
    }
    for i in 0..n {
        let row = cost.row(i);
        let (mut best, mut arg) = (f64::INFINITY, 0usize);
        for j in 0..n {
            let r = row[j] - v[j];
            if r < best || (r == best && col_owner[arg] != FREE && col_owner[j] == FREE) {
                best = r;
                arg = j;
            }
        }
        u[i] = best;
        if col_owner[arg] == FREE {
            col_owner[arg] = i;
            row_match[i] = arg;
        }
    }

    let mut iterations = 0usize;
    let mut dist = vec![0.0; n];
    let mut pred = vec![0usize; n];
    let mut todo: Vec<usize> = Vec::with_capacity(n);
    let mut scanned: Vec<usize> = Vec::with_capacity(n);
    for root in 0..n {
        if row_match[root] != FREE {
            continue;
        }
        // Dijkstra over reduced costs from the free row; each step relaxes the
        // unscanned columns and picks the next minimum in one pass.
        todo.clear();
        todo.extend(0..n);
        scanned.clear();
        let row = cost.row(root);
        let (mut best, mut best_pos) = (f64::INFINITY, 0usize);
        for j in 0..n {
            dist[j] = row[j] - u[root] - v[j];
            pred[j] = root;
            if dist[j] < best {
                best = dist[j];
                best_pos = j;
            }
        }
        let (end, reach) = loop {
            iterations += 1;
            let j = todo.swap_remove(best_pos);
            let d = dist[j];
            scanned.push(j);
            let i = col_owner[j];
            if i == FREE {
                break (j, d);
            }
            let row = cost.row(i);
            let ui = u[i];
            best = f64::INFINITY;
            best_pos = 0;
            for (p, &k) in todo.iter().enumerate() {
                let nd = d + row[k] - ui - v[k];
                if nd < dist[k] {
                    dist[k] = nd;
                    pred[k] = i;
                }
                if dist[k] < best {
                    best = dist[k];
                    best_pos = p;
                }
            }
        };
        u[root] += reach;
        for &j in &scanned {
            if j != end {
                let shift = reach - dist[j];
                v[j] -= shift;
                u[col_owner[j]] += shift;
            }
        }
        let mut j = end;
        loop {
            let i = pred[j];
            col_owner[j] = i;
            let prev = row_match[i];
            row_match[i] = j;
            if i == root {
                break;
            }
            j = prev;
        }
    }
    let assignment = row_match;
    let row_potentials = u;
    let col_potentials = v;
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum();
    let dual: f64 = row_potentials.iter().sum::<f64>() + col_potentials.iter().sum::<f64>();

    let scale = cost.data.iter().fold(0.0f64, |m, c| m.max(c.abs())).max(1.0);
    let violation = max_dual_violation(cost, &row_potentials, &col_potentials);
    if violation > 1e-9 * scale {
        return Err(Error::Degenerate(format!(
            "assignment failed to certify optimality (reduced cost {:.3e})",
            -violation
        )));
    }
    Ok(TransportResult {
        value: total / n as f64,
        assignment,
        row_potentials,
        col_potentials,
        solver: SolverKind::Dense,
        iterations,
        dual_gap: (total - dual) / n as f64,
    })
}
