//! Sparse epsilon-scaling auction for large squared-Euclidean assignment
//! problems.
//!
//! Candidate edges come from nearest neighbours after an affine pre-alignment
//! of the source cloud onto the target cloud. After the scaling phases every
//! person is checked against all objects for `min_j |x - b_j|^2 + price_j`;
//! violating edges are added and the auction is repaired until the assignment
//! is epsilon-optimal on the complete graph.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use super::assignment::{SolverKind, TransportResult};
use super::gaussian::psd_sqrt;
use super::kdtree::KdTree;
use crate::data::Points;
use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy)]
pub(crate) struct AuctionParams {
    pub neighbours: usize,
    pub reverse_neighbours: usize,
    /// Edges added per violating person during repair.
    pub repair_candidates: usize,
    /// Localized repair is used while `violators * worst / eps_final` stays
    /// below this many bids per person; otherwise epsilon-scaling restarts.
    pub local_repair_budget: f64,
    /// Final epsilon relative to the clouds' spread.
    pub relative_epsilon: f64,
    pub scaling_factor: f64,
    pub max_bids: usize,
}

impl Default for AuctionParams {
    fn default() -> Self {
        AuctionParams {
            neighbours: 24,
            reverse_neighbours: 8,
            repair_candidates: 8,
            local_repair_budget: 20.0,
            relative_epsilon: 1e-10,
            scaling_factor: 5.0,
            max_bids: 2_000_000_000,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn moments(p: &Points) -> (DVector<f64>, DMatrix<f64>) {
    let d = p.dim();
    let n = p.len() as f64;
    let mean = DVector::from_vec(p.mean());
    let mut cov = DMatrix::zeros(d, d);
    for row in p.rows() {
        let c = DVector::from_column_slice(row) - &mean;
        cov += &c * c.transpose();
    }
    (mean, cov / n)
}

/// Source points moved by the Gaussian optimal map between the two clouds'
/// first two moments; falls back to a translation when that map is ill-posed.
fn prealign(a: &Points, b: &Points) -> (Vec<f64>, f64) {
    let (ma, sa) = moments(a);
    let (mb, sb) = moments(b);
    let spread = sa.trace() + sb.trace() + (&ma - &mb).norm_squared();
    let map = (|| {
        let eig_min = sa.clone().symmetric_eigen().eigenvalues.min();
        if eig_min <= 1e-12 * sa.trace().max(f64::MIN_POSITIVE) {
            return None;
        }
        let sa_half = psd_sqrt("source covariance", &sa).ok()?;
        let sa_inv_half = sa_half.clone().try_inverse()?;
        let middle = psd_sqrt("cross term", &(&sa_half * &sb * &sa_half)).ok()?;
        Some(&sa_inv_half * middle * &sa_inv_half)
    })()
    .unwrap_or_else(|| DMatrix::identity(a.dim(), a.dim()));
    let mut out = Vec::with_capacity(a.coords().len());
    for row in a.rows() {
        let x = &mb + &map * (DVector::from_column_slice(row) - &ma);
        out.extend(x.iter());
    }
    (out, spread)
}

/// Index answering `k`-smallest `|q - b_j|^2 + price_j` queries.
///
/// Prices of a near-optimal auction vary roughly quadratically over the
/// target cloud, which defeats box-plus-minimum-offset pruning. A fitted
/// quadratic `x^T K x + 2 w.x + c` in centred coordinates is absorbed into
/// whitened coordinates `u = L^T x` with `L L^T = I + K`, leaving only the
/// residual as a per-point offset. Ranks are unchanged by the transform.
struct PriceIndex {
    tree: KdTree,
    center: DVector<f64>,
    shift: DVector<f64>,
    l_inv: DMatrix<f64>,
}

type Quadratic = (DMatrix<f64>, DVector<f64>, f64);

impl PriceIndex {
    fn new(b: &Points, prices: &[f64]) -> Self {
        let d = b.dim();
        let center = DVector::from_vec(b.mean());
        let flat = || (DMatrix::zeros(d, d), DVector::zeros(d), 0.0);
        let (k, w, c) = Self::fit_quadratic(b, &center, prices).unwrap_or_else(flat);
        let (l, k, w, c) = match (DMatrix::identity(d, d) + &k).cholesky() {
            Some(ch) => (ch.l(), k, w, c),
            None => {
                let (k, w, c) = flat();
                (DMatrix::identity(d, d), k, w, c)
            }
        };
        let l_inv = l.clone().try_inverse().unwrap_or_else(|| DMatrix::identity(d, d));
        let lt = l.transpose();
        let mut coords = Vec::with_capacity(b.coords().len());
        let mut residual = Vec::with_capacity(b.len());
        for (row, p) in b.rows().zip(prices) {
            let x = DVector::from_column_slice(row) - &center;
            coords.extend((&lt * &x).iter());
            residual.push(p - (x.dot(&(&k * &x)) + 2.0 * w.dot(&x) + c));
        }
        let mut tree = KdTree::new(d, coords);
        tree.set_offsets(&residual);
        PriceIndex { tree, center, shift: w, l_inv }
    }

    fn fit_quadratic(b: &Points, center: &DVector<f64>, prices: &[f64]) -> Option<Quadratic> {
        let d = b.dim();
        let pairs: Vec<(usize, usize)> = (0..d).flat_map(|r| (r..d).map(move |s| (r, s))).collect();
        let p = pairs.len() + d + 1;
        let mut gram = DMatrix::<f64>::zeros(p, p);
        let mut rhs = DVector::<f64>::zeros(p);
        let mut f = DVector::<f64>::zeros(p);
        for (row, &y) in b.rows().zip(prices) {
            let x: Vec<f64> = row.iter().zip(center.iter()).map(|(v, m)| v - m).collect();
            for (t, &(r, s)) in pairs.iter().enumerate() {
                f[t] = if r == s { x[r] * x[r] } else { 2.0 * x[r] * x[s] };
            }
            for r in 0..d {
                f[pairs.len() + r] = 2.0 * x[r];
            }
            f[p - 1] = 1.0;
            gram += &f * f.transpose();
            rhs += &f * y;
        }
        let coef = gram.cholesky()?.solve(&rhs);
        let mut k = DMatrix::zeros(d, d);
        for (t, &(r, s)) in pairs.iter().enumerate() {
            k[(r, s)] = coef[t];
            k[(s, r)] = coef[t];
        }
        let w = DVector::from_iterator(d, (0..d).map(|r| coef[pairs.len() + r]));
        Some((k, w, coef[p - 1]))
    }

    /// Indices of the `k` smallest `|q - b_j|^2 + price_j`, smallest first.
    fn smallest(&self, q: &[f64], k: usize) -> Vec<usize> {
        let x = DVector::from_column_slice(q) - &self.center - &self.shift;
        let z = &self.l_inv * x;
        self.tree.k_min_offset(z.as_slice(), k).into_iter().map(|(j, _)| j).collect()
    }
}

struct Edges {
    adj: Vec<Vec<(usize, f64)>>,
}

impl Edges {
    fn insert(&mut self, i: usize, j: usize, c: f64) -> bool {
        if self.adj[i].iter().any(|e| e.0 == j) {
            return false;
        }
        self.adj[i].push((j, c));
        true
    }
}

struct State {
    prices: Vec<f64>,
    owner: Vec<usize>,
    assigned: Vec<usize>,
    bids: usize,
}

fn bid_until_assigned(
    edges: &Edges,
    state: &mut State,
    mut queue: VecDeque<usize>,
    eps: f64,
    bump: f64,
    max_bids: usize,
) -> Result<()> {
    while let Some(i) = queue.pop_front() {
        let (mut j1, mut w1, mut w2) = (NONE, f64::INFINITY, f64::INFINITY);
        for &(j, c) in &edges.adj[i] {
            let w = c + state.prices[j];
            if w < w1 {
                w2 = w1;
                w1 = w;
                j1 = j;
            } else if w < w2 {
                w2 = w;
            }
        }
        let gap = if w2.is_finite() { w2 - w1 } else { bump };
        state.prices[j1] += gap + eps;
        let prev = state.owner[j1];
        if prev != NONE {
            state.assigned[prev] = NONE;
            queue.push_back(prev);
        }
        state.owner[j1] = i;
        state.assigned[i] = j1;
        state.bids += 1;
        if state.bids > max_bids {
            return Err(Error::Degenerate("auction exceeded its bid budget".into()));
        }
    }
    Ok(())
}

fn run_phase(edges: &Edges, state: &mut State, eps: f64, bump: f64, max_bids: usize) -> Result<()> {
    state.owner.iter_mut().for_each(|o| *o = NONE);
    state.assigned.iter_mut().for_each(|a| *a = NONE);
    let queue: VecDeque<usize> = (0..edges.adj.len()).collect();
    bid_until_assigned(edges, state, queue, eps, bump, max_bids)
}

pub(crate) fn auction_w2sq(a: &Points, b: &Points, params: AuctionParams) -> Result<TransportResult> {
    let n = a.len();
    let dim = a.dim();
    let (aligned, spread) = prealign(a, b);
    let scale = if spread > 0.0 { spread } else { 1.0 };

    let b_tree = KdTree::new(dim, b.coords().to_vec());
    let aligned_tree = KdTree::new(dim, aligned.clone());
    let mut edges = Edges { adj: vec![Vec::new(); n] };
    let k = params.neighbours.min(n);
    for i in 0..n {
        for j in b_tree.nearest(&aligned[i * dim..(i + 1) * dim], k) {
            edges.insert(i, j, sq_dist(a.row(i), b.row(j)));
        }
        // guarantees a perfect matching in the candidate graph
        edges.insert(i, i, sq_dist(a.row(i), b.row(i)));
    }
    for j in 0..n {
        for i in aligned_tree.nearest(b.row(j), params.reverse_neighbours.min(n)) {
            edges.insert(i, j, sq_dist(a.row(i), b.row(j)));
        }
    }

    let eps_final = params.relative_epsilon * scale;
    let mut state = State { prices: vec![0.0; n], owner: vec![NONE; n], assigned: vec![NONE; n], bids: 0 };
    let mut row_potentials = vec![0.0; n];
    let mut restart_from = Some(scale);
    loop {
        if let Some(mut eps) = restart_from {
            loop {
                run_phase(&edges, &mut state, eps, scale, params.max_bids)?;
                if eps <= eps_final {
                    break;
                }
                eps = (eps / params.scaling_factor).max(eps_final);
            }
        }
        let index = PriceIndex::new(b, &state.prices);
        let mut worst = 0.0f64;
        let mut violators = VecDeque::new();
        for (i, potential) in row_potentials.iter_mut().enumerate().take(n) {
            let j = state.assigned[i];
            let current = sq_dist(a.row(i), b.row(j)) + state.prices[j];
            let mut best = f64::INFINITY;
            let mut violated = false;
            for jm in index.smallest(a.row(i), params.repair_candidates) {
                let c = sq_dist(a.row(i), b.row(jm));
                let v = c + state.prices[jm];
                best = best.min(v);
                if v < current - eps_final && edges.insert(i, jm, c) {
                    worst = worst.max(current - v);
                    violated = true;
                }
            }
            *potential = best;
            if violated {
                violators.push_back(i);
            }
        }
        if violators.is_empty() {
            break;
        }
        if (violators.len() as f64) * (worst / eps_final) < params.local_repair_budget * n as f64 {
            for &i in &violators {
                state.owner[state.assigned[i]] = NONE;
                state.assigned[i] = NONE;
            }
            bid_until_assigned(&edges, &mut state, violators, eps_final, scale, params.max_bids)?;
            restart_from = None;
        } else {
            restart_from = Some(worst.max(eps_final));
        }
    }

    let primal: f64 = (0..n).map(|i| sq_dist(a.row(i), b.row(state.assigned[i]))).sum();
    let dual: f64 = row_potentials.iter().sum::<f64>() - state.prices.iter().sum::<f64>();
    Ok(TransportResult {
        value: primal / n as f64,
        assignment: state.assigned,
        row_potentials,
        col_potentials: state.prices.iter().map(|p| -p).collect(),
        solver: SolverKind::Auction,
        iterations: state.bids,
        dual_gap: (primal - dual) / n as f64,
    })
}
